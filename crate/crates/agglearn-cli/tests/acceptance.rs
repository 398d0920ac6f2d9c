//! Acceptance suite: one test per release criterion.
//!
//! Each test prints its measured numbers, so a failing criterion shows how
//! far off it landed, and a passing one documents the margin. The early
//! criteria pin exact oracle values; the later ones reproduce comparative
//! findings on synthetic data and check the CLI end to end.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use agglearn::agg_logistic::{
    estimate_gradient_rescaled, estimate_gradient_simple, exact_gradient, log_likelihood, train,
    Model, Rescaling, TrainConfig,
};
use agglearn::aggregation::{aggregate, calibrate_sigma, l2_sensitivity, table_count};
use agglearn::data::{generate_synthetic, split, GranularDataset, LabelKind, SyntheticSpec};
use agglearn::encoding::{Encoder, HashedEncoderConfig};
use agglearn::enrichment::{compute_ctr_table, enrich, predict_enriched, train_enriched};
use agglearn::evaluation::{self, DEFAULT_CLIP_EPSILON};
use agglearn::skyline::{dummy_model, train_skyline};

const GRADIENT_REL_TOL: f64 = 1e-4;
const COLLAPSE_REL_TOL: f64 = 1e-9;
const EQUIVALENCE_NCE_TOL: f64 = 0.005;
const SIGMA_570_EXPECTED: f64 = 16.28;
const SIGMA_190_EXPECTED: f64 = 9.40;
const SIGMA_TOL: f64 = 0.01;
const NOISE_NEGLIGIBLE_TOL: f64 = 0.01;
const SIZE_CROSSOVER_TOL: f64 = 0.005;
const HASHED_NCE_TOL: f64 = 0.005;
const DUMMY_NCE_TOL: f64 = 1e-12;
const ENTROPY_TENTH: f64 = 0.325083;
const ENTROPY_TOL: f64 = 1e-6;
const DEGRADATION_EXPECTED: f64 = -2.47;
const DEGRADATION_TOL: f64 = 0.01;

fn base_config() -> TrainConfig {
    TrainConfig::default()
}

fn synthetic(cardinalities: &[usize], rows: usize, seed: u64) -> (GranularDataset, Encoder) {
    let spec = SyntheticSpec::new(cardinalities.to_vec(), rows, 0.1, seed);
    let (data, _) = generate_synthetic(&spec).expect("synthetic generation");
    let encoder = Encoder::exact(cardinalities).expect("exact encoder");
    (data, encoder)
}

fn nce_of(preds: &[f64], labels: &[u8]) -> f64 {
    evaluation::nce(preds, labels, DEFAULT_CLIP_EPSILON)
        .expect("nce")
        .nce
}

fn model_nce(model: &Model, test: &GranularDataset) -> f64 {
    let preds = model.predict(test).expect("predict");
    nce_of(&preds, test.labels(LabelKind::Click))
}

/// Relative gap with a small absolute floor so near-zero pairs compare on
/// absolute terms instead of dividing by nothing.
fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs().max(b.abs()) + 1e-8)
}

#[test]
fn criterion_01_gradient_matches_finite_differences() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for instance in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + instance);
        let num_features = rng.random_range(2..=5usize);
        let cardinalities: Vec<usize> =
            (0..num_features).map(|_| rng.random_range(2..=4)).collect();
        let rows = rng.random_range(5..=100usize);
        let spec = SyntheticSpec::new(cardinalities.clone(), rows, 0.3, instance);
        let (data, _) = generate_synthetic(&spec).expect("synthetic generation");
        let encoder = Encoder::exact(&cardinalities).expect("exact encoder");
        let dim = encoder.dim() as usize;
        let theta: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bias = rng.random_range(-1.0..1.0);
        let model = Model::new(encoder.clone(), theta.clone(), bias).expect("model");

        let grad = exact_gradient(&model, &data, LabelKind::Click).expect("gradient");
        let eps = 1e-4;
        for (coord, g) in grad.iter() {
            let mut plus = theta.clone();
            plus[coord as usize] += eps;
            let mut minus = theta.clone();
            minus[coord as usize] -= eps;
            let ll_plus = log_likelihood(
                &Model::new(encoder.clone(), plus, bias).expect("model"),
                &data,
                LabelKind::Click,
            )
            .expect("log likelihood");
            let ll_minus = log_likelihood(
                &Model::new(encoder.clone(), minus, bias).expect("model"),
                &data,
                LabelKind::Click,
            )
            .expect("log likelihood");
            let fd = (ll_plus - ll_minus) / (2.0 * eps);
            worst = worst.max(rel_gap(fd, g));
        }
    }
    let elapsed = start.elapsed();
    assert!(
        worst < GRADIENT_REL_TOL,
        "worst relative gap {worst:.3e} exceeds {GRADIENT_REL_TOL:.0e}"
    );
    assert!(elapsed.as_secs() < 10, "took {elapsed:?}, budget 10s");
    println!(
        "criterion 1: exact gradient vs central differences, worst relative gap {worst:.3e} \
         over 20 instances in {elapsed:.2?}"
    );
}

#[test]
fn criterion_02_estimators_collapse_to_exact_gradient() {
    let mut worst: f64 = 0.0;
    for instance in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + instance);
        let num_features = rng.random_range(2..=5usize);
        let cardinalities: Vec<usize> =
            (0..num_features).map(|_| rng.random_range(2..=4)).collect();
        let rows = rng.random_range(20..=100usize);
        let spec = SyntheticSpec::new(cardinalities.clone(), rows, 0.3, instance);
        let (data, _) = generate_synthetic(&spec).expect("synthetic generation");
        let encoder = Encoder::exact(&cardinalities).expect("exact encoder");
        let dim = encoder.dim() as usize;
        let theta: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bias = rng.random_range(-1.0..1.0);
        let model = Model::new(encoder.clone(), theta, bias).expect("model");

        let report = aggregate(&data, &encoder).expect("aggregate");
        let exact = exact_gradient(&model, &data, LabelKind::Click).expect("exact");
        let simple = estimate_gradient_simple(
            &model,
            &report,
            &data,
            LabelKind::Click,
            data.num_rows() as f64,
        )
        .expect("simple estimator");
        let rescaled =
            estimate_gradient_rescaled(&model, &report, &data, LabelKind::Click).expect("rescaled");

        let mut coords: Vec<u64> = exact.coords().to_vec();
        coords.extend_from_slice(simple.coords());
        coords.extend_from_slice(rescaled.coords());
        coords.sort_unstable();
        coords.dedup();
        for c in coords {
            let e = exact.get(c);
            worst = worst.max(rel_gap(simple.get(c), e));
            worst = worst.max(rel_gap(rescaled.get(c), e));
        }
    }
    assert!(
        worst < COLLAPSE_REL_TOL,
        "worst per-coordinate relative gap {worst:.3e} exceeds {COLLAPSE_REL_TOL:.0e}"
    );
    println!(
        "criterion 2: both estimators equal the exact gradient at the collapse point, \
         worst per-coordinate gap {worst:.3e} over 10 instances"
    );
}

#[test]
fn criterion_03_noiseless_aggregated_training_matches_skyline() {
    let start = Instant::now();
    let (data, encoder) = synthetic(&[12, 10, 8, 6], 100_000, 42);
    let parts = split(&data, &[0.8, 0.2], 42).expect("split");
    let (train_set, test_set) = (&parts[0], &parts[1]);

    let config = base_config();
    let report = aggregate(train_set, &encoder).expect("aggregate");
    let agg = train(&report, train_set, &config).expect("aggregated training");
    let sky = train_skyline(train_set, &encoder, &config).expect("skyline training");

    let nce_agg = model_nce(&agg.model, test_set);
    let nce_sky = model_nce(&sky.model, test_set);
    let gap = (nce_agg - nce_sky).abs();
    let elapsed = start.elapsed();
    assert!(
        gap < EQUIVALENCE_NCE_TOL,
        "test NCE gap {gap:.6} exceeds {EQUIVALENCE_NCE_TOL}"
    );
    assert!(elapsed.as_secs() < 300, "took {elapsed:?}, budget 5min");
    println!(
        "criterion 3: noiseless aggregated NCE {nce_agg:.6} vs skyline {nce_sky:.6}, \
         gap {gap:.2e} in {elapsed:.2?}"
    );
}

#[test]
fn criterion_04_privacy_calibration_values() {
    let tables = table_count(19).expect("table count");
    assert_eq!(tables, 190);
    let sens_full = l2_sensitivity(tables, 3, false).expect("sensitivity");
    let sens_repar = l2_sensitivity(tables, 3, true).expect("sensitivity");
    assert_eq!(sens_full, 570f64.sqrt(), "full sensitivity is sqrt(190*3)");
    assert_eq!(
        sens_repar,
        190f64.sqrt(),
        "reparameterized sensitivity is sqrt(190)"
    );

    let sigma_full = calibrate_sigma(10.0, 1e-10, sens_full).expect("sigma");
    let sigma_repar = calibrate_sigma(10.0, 1e-10, sens_repar).expect("sigma");
    assert!(
        (sigma_full - SIGMA_570_EXPECTED).abs() < SIGMA_TOL,
        "sigma for sqrt(570): {sigma_full}"
    );
    assert!(
        (sigma_repar - SIGMA_190_EXPECTED).abs() < SIGMA_TOL,
        "sigma for sqrt(190): {sigma_repar}"
    );
    println!(
        "criterion 4: calibrated sigma {sigma_full:.6} (full) and {sigma_repar:.6} \
         (reparameterized) for the 19-feature geometry"
    );
}

#[test]
fn criterion_05_rescaling_dominates_global_scaling() {
    let start = Instant::now();
    let seeds: [u64; 5] = [0, 1, 2, 3, 4];
    let l2_grid = [0.0625, 1.0, 16.0];
    let mut mean_rescaled = [0.0f64; 3];
    let mut mean_simple = [0.0f64; 3];
    let tables = table_count(3).expect("table count");
    let sigma = calibrate_sigma(
        10.0,
        1e-10,
        l2_sensitivity(tables, 3, false).expect("sensitivity"),
    )
    .expect("sigma");

    for &seed in &seeds {
        let (data, encoder) = synthetic(&[10, 8, 6], 40_000, seed);
        let parts = split(&data, &[0.8, 0.2], seed).expect("split");
        let (train_set, test_set) = (&parts[0], &parts[1]);
        let report = aggregate(train_set, &encoder)
            .expect("aggregate")
            .add_gaussian_noise(sigma, seed)
            .expect("noise");
        let pool_size = train_set.num_rows() / 10;
        let head: Vec<usize> = (0..pool_size).collect();
        let pool = train_set.subset(&head).expect("subsample");

        for (j, &l2) in l2_grid.iter().enumerate() {
            let mut config = base_config();
            config.l2_lambda = l2;
            config.seed = seed;
            // The preconditioner normalizes by pool counts while the
            // gradient runs at report scale, so a 10% pool wants a step
            // about a tenth of the matched-scale default.
            config.step_size = 0.1;
            config.rescaling = Rescaling::CoordinateWise;
            let rescaled = train(&report, &pool, &config).expect("rescaled training");
            config.rescaling = Rescaling::Global;
            let simple = train(&report, &pool, &config).expect("global training");
            mean_rescaled[j] += model_nce(&rescaled.model, test_set) / seeds.len() as f64;
            mean_simple[j] += model_nce(&simple.model, test_set) / seeds.len() as f64;
        }
    }

    let elapsed = start.elapsed();
    for (j, &l2) in l2_grid.iter().enumerate() {
        assert!(
            mean_rescaled[j] >= mean_simple[j],
            "at l2={l2}: rescaled mean NCE {:.6} < global mean NCE {:.6}",
            mean_rescaled[j],
            mean_simple[j]
        );
    }
    assert!(
        mean_rescaled[0] > mean_simple[0],
        "no strict improvement at the lowest l2: {:.6} vs {:.6}",
        mean_rescaled[0],
        mean_simple[0]
    );
    assert!(elapsed.as_secs() < 600, "took {elapsed:?}, budget 10min");
    println!(
        "criterion 5: mean NCE over {} seeds, rescaled {:?} vs global {:?} on l2 grid {:?} \
         in {elapsed:.2?}",
        seeds.len(),
        mean_rescaled,
        mean_simple,
        l2_grid
    );
}

#[test]
fn criterion_06_noise_negligible_then_enrich_overtakes() {
    let start = Instant::now();
    let (data, encoder) = synthetic(&[12, 10, 8, 6], 100_000, 7);
    let parts = split(&data, &[0.7, 0.1, 0.2], 7).expect("split");
    let (train_set, labeled_set, test_set) = (&parts[0], &parts[1], &parts[2]);
    let clean = aggregate(train_set, &encoder).expect("aggregate");

    let tables = table_count(4).expect("table count");
    let challenge_sigma = calibrate_sigma(
        10.0,
        1e-10,
        l2_sensitivity(tables, 3, false).expect("sensitivity"),
    )
    .expect("sigma");

    let config = base_config();
    let agg_nce_at = |sigma: f64| -> f64 {
        let report = clean.add_gaussian_noise(sigma, 7).expect("noise");
        let outcome = train(&report, train_set, &config).expect("training");
        model_nce(&outcome.model, test_set)
    };
    let enrich_nce_at = |sigma: f64| -> f64 {
        let report = clean.add_gaussian_noise(sigma, 7).expect("noise");
        let table = compute_ctr_table(&report, LabelKind::Click, 32.0, None).expect("ctr table");
        let enriched = enrich(labeled_set, &table, false).expect("enrich");
        let outcome = train_enriched(&enriched, &config).expect("enriched training");
        let preds = predict_enriched(&outcome.model, test_set).expect("predict");
        nce_of(&preds, test_set.labels(LabelKind::Click))
    };

    let nce_clean = agg_nce_at(0.0);
    let nce_challenge = agg_nce_at(challenge_sigma);
    let small_gap = (nce_clean - nce_challenge).abs();
    assert!(
        small_gap < NOISE_NEGLIGIBLE_TOL,
        "challenge-scale noise moved NCE by {small_gap:.4} (clean {nce_clean:.4}, \
         noisy {nce_challenge:.4})"
    );

    let large_sigmas = [512.0, 2048.0];
    let mut crossover = None;
    for &sigma in &large_sigmas {
        let agg = agg_nce_at(sigma);
        let enr = enrich_nce_at(sigma);
        if enr > agg {
            crossover = Some((sigma, agg, enr));
            break;
        }
    }
    let elapsed = start.elapsed();
    let (sigma, agg, enr) = crossover.expect("no large sigma had enrichment ahead");
    assert!(elapsed.as_secs() < 1200, "took {elapsed:?}, budget 20min");
    println!(
        "criterion 6: aggregated NCE {nce_clean:.4} clean vs {nce_challenge:.4} at \
         challenge sigma {challenge_sigma:.2} (gap {small_gap:.2e}); at sigma {sigma} \
         enrichment {enr:.4} beats aggregated {agg:.4}; {elapsed:.2?}"
    );
}

#[test]
fn criterion_07_enrich_wins_small_data_agglogistic_wins_large() {
    let start = Instant::now();
    let seeds: [u64; 3] = [0, 1, 2];
    let sizes = [250usize, 4_000, 64_000];
    let tables = table_count(4).expect("table count");
    let sigma = calibrate_sigma(
        10.0,
        1e-10,
        l2_sensitivity(tables, 3, false).expect("sensitivity"),
    )
    .expect("sigma");

    let mut mean_agg = vec![0.0f64; sizes.len()];
    let mut mean_enrich = vec![0.0f64; sizes.len()];
    for &seed in &seeds {
        let (data, encoder) = synthetic(&[12, 10, 8, 6], 100_000, seed);
        let parts = split(&data, &[0.7, 0.1, 0.2], seed).expect("split");
        let (train_set, test_set) = (&parts[0], &parts[2]);
        let report = aggregate(train_set, &encoder)
            .expect("aggregate")
            .add_gaussian_noise(sigma, seed)
            .expect("noise");

        for (j, &n) in sizes.iter().enumerate() {
            let head: Vec<usize> = (0..n).collect();
            let subset = train_set.subset(&head).expect("subset");
            let mut config = base_config();
            config.seed = seed;
            // Keep the effective step constant as the pool shrinks: the
            // preconditioner normalizes by pool counts while the gradient
            // runs at report scale, a factor of train_rows / n.
            config.step_size = n as f64 / train_set.num_rows() as f64;
            let agg = train(&report, &subset, &config).expect("aggregated training");
            mean_agg[j] += model_nce(&agg.model, test_set) / seeds.len() as f64;

            config.step_size = 1.0;
            let table =
                compute_ctr_table(&report, LabelKind::Click, 32.0, None).expect("ctr table");
            let enriched = enrich(&subset, &table, false).expect("enrich");
            let outcome = train_enriched(&enriched, &config).expect("enriched training");
            let preds = predict_enriched(&outcome.model, test_set).expect("predict");
            mean_enrich[j] +=
                nce_of(&preds, test_set.labels(LabelKind::Click)) / seeds.len() as f64;
        }
    }

    let elapsed = start.elapsed();
    assert!(
        mean_enrich[0] > mean_agg[0],
        "at {} rows enrichment {:.4} does not beat aggregated {:.4}",
        sizes[0],
        mean_enrich[0],
        mean_agg[0]
    );
    let last = sizes.len() - 1;
    assert!(
        mean_agg[last] >= mean_enrich[last] - SIZE_CROSSOVER_TOL,
        "at {} rows aggregated {:.4} trails enrichment {:.4} by more than {}",
        sizes[last],
        mean_agg[last],
        mean_enrich[last],
        SIZE_CROSSOVER_TOL
    );
    assert!(elapsed.as_secs() < 1200, "took {elapsed:?}, budget 20min");
    println!(
        "criterion 7: mean NCE by granular size {sizes:?}: enrichment {mean_enrich:?} vs \
         aggregated {mean_agg:?} in {elapsed:.2?}"
    );
}

#[test]
fn criterion_08_hashed_aggregation_tracks_exact() {
    let (data, encoder) = synthetic(&[12, 10, 8, 6], 100_000, 5);
    let parts = split(&data, &[0.8, 0.2], 5).expect("split");
    let (train_set, test_set) = (&parts[0], &parts[1]);
    let config = base_config();

    let report = aggregate(train_set, &encoder).expect("aggregate");
    let exact_model = train(&report, train_set, &config).expect("exact training");
    let nce_exact = model_nce(&exact_model.model, test_set);

    let exact_dim = encoder.dim();
    let hashed =
        Encoder::hashed(4, HashedEncoderConfig::new(16 * exact_dim, 0)).expect("hashed encoder");
    let hashed_report = aggregate(train_set, &hashed).expect("hashed aggregate");
    let hashed_model = train(&hashed_report, train_set, &config).expect("hashed training");
    let nce_hashed = model_nce(&hashed_model.model, test_set);

    let gap = (nce_hashed - nce_exact).abs();
    assert!(
        gap < HASHED_NCE_TOL,
        "hashed NCE {nce_hashed:.6} vs exact {nce_exact:.6}, gap {gap:.4}"
    );
    println!(
        "criterion 8: hashed space {} (16x the {} exact coordinates) reaches NCE \
         {nce_hashed:.6} vs exact {nce_exact:.6}, gap {gap:.2e}",
        16 * exact_dim,
        exact_dim
    );
}

#[test]
fn criterion_09_metric_identities() {
    let mut labels = vec![0u8; 1000];
    for l in labels.iter_mut().take(100) {
        *l = 1;
    }
    let encoder = Encoder::exact(&[2]).expect("encoder");
    let dummy = dummy_model(&labels, &encoder).expect("dummy model");
    let rows: Vec<Vec<u32>> = labels.iter().map(|_| vec![0u32]).collect();
    let mut dataset = GranularDataset::new(1);
    for (row, &label) in rows.iter().zip(&labels) {
        dataset.push_row(row, label, 0).expect("push row");
    }
    let preds = dummy.predict(&dataset).expect("predict");
    let result = evaluation::nce(&preds, &labels, DEFAULT_CLIP_EPSILON).expect("nce");
    assert!(
        result.nce.abs() < DUMMY_NCE_TOL,
        "dummy NCE {} is not 0",
        result.nce
    );
    assert!(
        (result.entropy - ENTROPY_TENTH).abs() < ENTROPY_TOL,
        "entropy at rate 0.1: {}",
        result.entropy
    );

    let degradation = evaluation::skyline_degradation(0.228707, 0.223184).expect("degradation");
    assert!(
        (degradation - DEGRADATION_EXPECTED).abs() < DEGRADATION_TOL,
        "degradation {degradation}"
    );
    println!(
        "criterion 9: dummy NCE {:.2e}, entropy(0.1) {:.7}, degradation {degradation:.4}%",
        result.nce, result.entropy
    );
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_agglearn")
}

fn run_cli(args: &[&str]) {
    let output = Command::new(bin())
        .args(args)
        .output()
        .expect("spawn the CLI binary");
    assert!(
        output.status.success(),
        "command {:?} failed with {:?}:\n{}",
        args,
        output.status,
        String::from_utf8_lossy(&output.stderr)
    );
}

fn snapshot_tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).expect("read dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .expect("relative path")
                    .to_path_buf();
                files.insert(rel, std::fs::read(&path).expect("read file"));
            }
        }
    }
    files
}

#[test]
fn criterion_10_cli_outputs_are_byte_identical_across_reruns_and_widths() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let root = tmp.path();
    let out = root.join("out");
    let p = |rel: &str| out.join(rel).display().to_string();

    let pass = |workers: &str| {
        let w = ["--workers", workers];
        let runs: Vec<Vec<String>> = vec![
            vec![
                "generate".into(),
                "--rows".into(),
                "6000".into(),
                "--cardinalities".into(),
                "8,6,4".into(),
                "--seed".into(),
                "3".into(),
                "--out".into(),
                p("gen"),
            ],
            vec![
                "split".into(),
                "--data".into(),
                p("gen/data.csv"),
                "--vocab".into(),
                p("gen/schema.vocab"),
                "--seed".into(),
                "3".into(),
                "--out".into(),
                p("parts"),
            ],
            vec![
                "aggregate".into(),
                "--data".into(),
                p("parts/train.csv"),
                "--vocab".into(),
                p("parts/schema.vocab"),
                "--sigma".into(),
                "8".into(),
                "--threshold".into(),
                "5".into(),
                "--seed".into(),
                "3".into(),
                "--out".into(),
                p("report"),
            ],
            vec![
                "train".into(),
                "agglogistic".into(),
                "--report".into(),
                p("report"),
                "--unlabeled".into(),
                p("parts/train.csv"),
                "--iterations".into(),
                "60".into(),
                "--out".into(),
                p("agg"),
            ],
            vec![
                "train".into(),
                "enrich".into(),
                "--report".into(),
                p("report"),
                "--labeled".into(),
                p("parts/labeled.csv"),
                "--valid".into(),
                p("parts/valid.csv"),
                "--prior-weight".into(),
                "8,32".into(),
                "--iterations".into(),
                "60".into(),
                "--out".into(),
                p("enrich"),
            ],
            vec![
                "train".into(),
                "skyline".into(),
                "--labeled".into(),
                p("parts/train.csv"),
                "--vocab".into(),
                p("parts/schema.vocab"),
                "--iterations".into(),
                "60".into(),
                "--out".into(),
                p("skyline"),
            ],
            vec![
                "train".into(),
                "fake".into(),
                "--report".into(),
                p("report"),
                "--num-fake".into(),
                "4000".into(),
                "--iterations".into(),
                "60".into(),
                "--dump-fake".into(),
                p("fake/rows.csv"),
                "--out".into(),
                p("fake"),
            ],
            vec![
                "train".into(),
                "dummy".into(),
                "--labeled".into(),
                p("parts/labeled.csv"),
                "--vocab".into(),
                p("parts/schema.vocab"),
                "--out".into(),
                p("dummy"),
            ],
            vec![
                "predict".into(),
                "--model".into(),
                p("agg/model.bin"),
                "--data".into(),
                p("parts/test.csv"),
                "--out".into(),
                p("pred-agg"),
            ],
            vec![
                "predict".into(),
                "--model".into(),
                p("enrich/model.bin"),
                "--data".into(),
                p("parts/test.csv"),
                "--out".into(),
                p("pred-enrich"),
            ],
            vec![
                "evaluate".into(),
                "--predictions".into(),
                p("pred-agg/predictions.csv"),
                "--data".into(),
                p("parts/test.csv"),
                "--against".into(),
                p("pred-enrich/predictions.csv"),
                "--bootstrap".into(),
                "300".into(),
                "--out".into(),
                p("eval"),
            ],
            vec![
                "sweep".into(),
                "noise".into(),
                "--sigmas".into(),
                "0,32".into(),
                "--seeds".into(),
                "0,1".into(),
                "--rows".into(),
                "3000".into(),
                "--cardinalities".into(),
                "6,4".into(),
                "--iterations".into(),
                "30".into(),
                "--l2-grid".into(),
                "1".into(),
                "--out".into(),
                p("sweep"),
            ],
        ];
        for run in runs {
            let mut args: Vec<&str> = w.to_vec();
            args.extend(run.iter().map(String::as_str));
            run_cli(&args);
        }
    };

    pass("1");
    let first = snapshot_tree(&out);
    assert!(!first.is_empty(), "first pass produced no files");
    pass("2");
    let second = snapshot_tree(&out);

    let first_paths: Vec<_> = first.keys().collect();
    let second_paths: Vec<_> = second.keys().collect();
    assert_eq!(
        first_paths, second_paths,
        "reruns produced different file sets"
    );
    for (path, bytes) in &first {
        assert_eq!(
            bytes,
            &second[path],
            "{} differs between a 1-worker and a 2-worker run",
            path.display()
        );
    }
    println!(
        "criterion 10: {} output files byte-identical across reruns at worker widths 1 and 2",
        first.len()
    );
}
