use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use uend::bias_predictor::write_pseudo_labels;
use uend::biasness::{empirical_joint, estimate_phi, level_curves, perfect_curve, write_curve_csv, BiasnessReport};
use uend::data::{colorize, load_idx, make_validation_split, Colorizer};
use uend::model::Checkpoint;
use uend::pipeline::{debias_from_snapshot, snapshot_biasness, synthetic_splits, train_vanilla, SplitSizes, Splits};

use crate::config::{DataConfig, ExperimentConfig, IdxData};
use crate::error::CliError;
use crate::run_dir::{io_error, RunDir, CONFIG_FILE, MANIFEST_FILE};

/// Last phase to execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    Vanilla = 1,
    PseudoLabel = 2,
    Debias = 3,
}

/// Train, validation and test sets described by the data section.
pub fn load_splits(config: &ExperimentConfig) -> Result<Splits, CliError> {
    match &config.data {
        DataConfig::Synthetic(s) => {
            let spec = config.bias_spec().expect("synthetic");
            let sizes = SplitSizes {
                n_train: s.n_train,
                val_fraction: s.val_fraction,
                n_test: s.n_test,
            };
            synthetic_splits(&spec, sizes).map_err(CliError::from_data)
        }
        DataConfig::Idx(idx) => idx_splits(config, idx),
    }
}

fn idx_splits(config: &ExperimentConfig, idx: &IdxData) -> Result<Splits, CliError> {
    let palette = config.palette().expect("idx");
    let (mut images, mut labels) = load_idx(&idx.train_images, &idx.train_labels).map_err(CliError::from_data)?;
    let (mut test_images, mut test_labels) = load_idx(&idx.test_images, &idx.test_labels).map_err(CliError::from_data)?;
    if let Some(limit) = idx.limit {
        images.truncate(limit);
        labels.truncate(limit);
        test_images.truncate(limit);
        test_labels.truncate(limit);
    }
    let n_targets = palette.len();
    if let Some(&bad) = labels.iter().chain(&test_labels).find(|&&l| l >= n_targets) {
        return Err(CliError::data(format!("label {bad} has no palette color ({n_targets} colors)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let all = colorize(&images, &labels, idx.rho, &palette, n_targets, &mut rng).map_err(CliError::from_data)?;
    let renderer = Colorizer::new(images, palette.clone());
    let (train, val) =
        make_validation_split(&all, idx.val_fraction, None, &renderer, &mut rng).map_err(CliError::from_data)?;
    let test = colorize(
        &test_images,
        &test_labels,
        1.0 / n_targets as f64,
        &palette,
        n_targets,
        &mut rng,
    )
    .map_err(CliError::from_data)?;
    Ok(Splits { train, val, test })
}

#[derive(Debug, Serialize)]
struct DataSummary {
    n_train: usize,
    n_val: usize,
    n_test: usize,
    feature_dim: usize,
    n_classes: usize,
    train_alignment: Option<f64>,
}

impl DataSummary {
    fn of(s: &Splits) -> Self {
        DataSummary {
            n_train: s.train.len(),
            n_val: s.val.len(),
            n_test: s.test.len(),
            feature_dim: s.train.feature_dim(),
            n_classes: s.train.n_targets(),
            train_alignment: s.train.alignment(),
        }
    }
}

#[derive(Debug, Serialize)]
struct Manifest {
    command: &'static str,
    seed: u64,
    rho: f64,
    phase_completed: usize,
    data: DataSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    results: Option<Results>,
    files: BTreeMap<String, String>,
}

#[derive(Debug, Default, Serialize)]
struct Results {
    vanilla_val_accuracy: f64,
    vanilla_test_accuracy: f64,
    phi_curve: Vec<PhiPoint>,
    debias: Vec<DebiasSummary>,
}

#[derive(Debug, Serialize)]
struct PhiPoint {
    epoch: usize,
    phi: f64,
    nmi_by: f64,
}

#[derive(Debug, Serialize)]
struct DebiasSummary {
    snapshot_epoch: usize,
    k: usize,
    retained_variance: f64,
    n_components: usize,
    pseudo_label_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    debiased_val_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    debiased_test_accuracy: Option<f64>,
}

fn finish(run: &RunDir, mut manifest: Manifest) -> Result<(), CliError> {
    manifest.files = run.checksums()?;
    run.write_json(&run.root().join(MANIFEST_FILE), &manifest)?;
    log::info!("wrote {}", run.root().join(MANIFEST_FILE).display());
    Ok(())
}

fn save_config(run: &RunDir, config: &ExperimentConfig) -> Result<(), CliError> {
    run.write_json(&run.root().join(CONFIG_FILE), config)
}

fn runtime<T>(r: uend::Result<T>) -> Result<T, CliError> {
    r.map_err(CliError::from_run)
}

/// Writes the three splits as CSV under `data/`.
pub fn cmd_generate(config: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let splits = load_splits(config)?;
    let run = RunDir::create(out)?;
    save_config(&run, config)?;
    for (name, set) in [("train.csv", &splits.train), ("val.csv", &splits.val), ("test.csv", &splits.test)] {
        runtime(set.write_csv(&run.data(name)?))?;
    }
    log::info!(
        "generated {} / {} / {} samples",
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );
    finish(
        &run,
        Manifest {
            command: "generate",
            seed: config.seed,
            rho: config.rho(),
            phase_completed: 0,
            data: DataSummary::of(&splits),
            results: None,
            files: BTreeMap::new(),
        },
    )
}

/// Runs phases 1 to `last`.
pub fn cmd_pipeline(config: &ExperimentConfig, out: &Path, last: Phase) -> Result<(), CliError> {
    let splits = load_splits(config)?;
    let run = RunDir::create(out)?;
    save_config(&run, config)?;
    let train_config = config.train_config();

    log::info!("phase 1: vanilla training for {} epochs", train_config.epochs);
    let vanilla = runtime(train_vanilla(&train_config, &splits.train, &splits.val, Some(&splits.test)))?;
    runtime(vanilla.report.write_epochs_csv(&run.report("vanilla_epochs.csv")))?;
    runtime(Checkpoint::new(train_config.epochs, vanilla.params.clone(), None).save(&run.checkpoint("vanilla_final.json")))?;
    for (&epoch, params) in &vanilla.snapshots {
        runtime(Checkpoint::new(epoch, params.clone(), None).save(&run.checkpoint(&Checkpoint::file_name("vanilla", epoch))))?;
    }
    // biasness is undefined for a fully aligned training set
    let curve = if config.rho() < 1.0 {
        runtime(snapshot_biasness(&vanilla, &splits.train, config.rho()))?
    } else {
        log::warn!("rho = 1: skipping the biasness curve");
        Vec::new()
    };
    write_phi_curve(&run.report("biasness.csv"), &curve)?;
    let mut results = Results {
        vanilla_val_accuracy: vanilla.report.val_accuracy,
        vanilla_test_accuracy: vanilla.report.test_accuracy.expect("test set given"),
        phi_curve: curve
            .iter()
            .map(|(epoch, r)| PhiPoint {
                epoch: *epoch,
                phi: r.phi_global,
                nmi_by: r.nmi_by,
            })
            .collect(),
        debias: Vec::new(),
    };
    log::info!("vanilla unbiased test accuracy {:.4}", results.vanilla_test_accuracy);

    if last >= Phase::PseudoLabel {
        for epoch in config.debias_epochs() {
            let summary = if last == Phase::PseudoLabel {
                pseudo_label_only(config, &run, &vanilla, &splits, epoch)?
            } else {
                debias(config, &run, &vanilla, &splits, epoch)?
            };
            results.debias.push(summary);
        }
    }

    finish(
        &run,
        Manifest {
            command: "pipeline",
            seed: config.seed,
            rho: config.rho(),
            phase_completed: last as usize,
            data: DataSummary::of(&splits),
            results: Some(results),
            files: BTreeMap::new(),
        },
    )
}

fn pseudo_label_only(
    config: &ExperimentConfig,
    run: &RunDir,
    vanilla: &uend::pipeline::VanillaRun,
    splits: &Splits,
    epoch: usize,
) -> Result<DebiasSummary, CliError> {
    log::info!("phase 2: bias predictor from the epoch-{epoch} snapshot");
    let snapshot = &vanilla.snapshots[&epoch];
    let (predictor, pseudo, fit) = runtime(uend::pipeline::fit_bias_predictor(
        snapshot,
        &splits.train,
        &splits.val,
        &config.predictor,
        config.seed,
    ))?;
    let accuracy = runtime(uend::pipeline::pseudo_label_accuracy(&pseudo))?;
    runtime(predictor.save(&run.checkpoint(&format!("predictor_epoch_{epoch:03}.json"))))?;
    let labels = pseudo.dataset.biases().expect("pseudo-labels present");
    runtime(write_pseudo_labels(&run.report(&format!("pseudo_labels_epoch_{epoch:03}.csv")), &labels))?;
    log_fit(epoch, fit.k, accuracy);
    Ok(DebiasSummary {
        snapshot_epoch: epoch,
        k: fit.k,
        retained_variance: fit.retained_variance,
        n_components: fit.n_components,
        pseudo_label_accuracy: accuracy,
        alpha: None,
        beta: None,
        debiased_val_accuracy: None,
        debiased_test_accuracy: None,
    })
}

fn debias(
    config: &ExperimentConfig,
    run: &RunDir,
    vanilla: &uend::pipeline::VanillaRun,
    splits: &Splits,
    epoch: usize,
) -> Result<DebiasSummary, CliError> {
    log::info!("phases 2-3 from the epoch-{epoch} snapshot");
    let d = runtime(debias_from_snapshot(
        &config.train_config(),
        &config.predictor,
        &config.search,
        vanilla,
        splits,
        epoch,
    ))?;
    log_fit(epoch, d.fit.k, d.pseudo_accuracy);
    runtime(d.predictor.save(&run.checkpoint(&format!("predictor_epoch_{epoch:03}.json"))))?;
    runtime(write_pseudo_labels(
        &run.report(&format!("pseudo_labels_epoch_{epoch:03}.csv")),
        &d.pseudo_labels,
    ))?;
    runtime(d.search.write_trials_csv(&run.report(&format!("search_epoch_{epoch:03}.csv"))))?;
    runtime(
        d.search
            .report
            .write_epochs_csv(&run.report(&format!("debiased_epoch_{epoch:03}_epochs.csv"))),
    )?;
    runtime(
        Checkpoint::new(config.training.epochs, d.search.params.clone(), None)
            .save(&run.checkpoint(&format!("debiased_from_epoch_{epoch:03}.json"))),
    )?;
    log::info!(
        "selected alpha {:.4} beta {:.4}: unbiased test accuracy {:.4}",
        d.search.best.alpha,
        d.search.best.beta,
        d.search.report.test_accuracy.unwrap_or(f64::NAN)
    );
    Ok(DebiasSummary {
        snapshot_epoch: epoch,
        k: d.fit.k,
        retained_variance: d.fit.retained_variance,
        n_components: d.fit.n_components,
        pseudo_label_accuracy: d.pseudo_accuracy,
        alpha: Some(d.search.best.alpha),
        beta: Some(d.search.best.beta),
        debiased_val_accuracy: Some(d.search.report.val_accuracy),
        debiased_test_accuracy: d.search.report.test_accuracy,
    })
}

fn log_fit(epoch: usize, k: usize, accuracy: Option<f64>) {
    match accuracy {
        Some(a) => log::info!("epoch {epoch}: {k} clusters, pseudo-label accuracy {a:.4}"),
        None => log::info!("epoch {epoch}: {k} clusters"),
    }
}

fn write_phi_curve(path: &Path, curve: &[(usize, BiasnessReport)]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    let csv_err = |e: csv::Error| CliError::runtime(format!("{}: {e}", path.display()));
    w.write_record(["epoch", "phi", "nmi_by", "nmi_perfect"]).map_err(csv_err)?;
    for (epoch, r) in curve {
        w.write_record([
            epoch.to_string(),
            format!("{:?}", r.phi_global),
            format!("{:?}", r.nmi_by),
            format!("{:?}", r.nmi_perfect),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

/// Reads `bias,prediction` rows, validating every cell.
pub fn read_predictions(path: &Path, n_t: usize) -> Result<(Vec<usize>, Vec<usize>), CliError> {
    let name = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::data(format!("{name}: {e}")))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::data(format!("{name}: {e}")).at_line(&name, 1))?
        .clone();
    let column = |want: &str| {
        headers
            .iter()
            .position(|h| h == want)
            .ok_or_else(|| CliError::data(format!("missing column {want:?}")).at_line(&name, 1))
    };
    let (bi, pi) = (column("bias")?, column("prediction")?);
    let (mut bias, mut preds) = (Vec::new(), Vec::new());
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            CliError::data(format!("malformed row: {e}")).at_line(&name, line)
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let cell = |i: usize, what: &str| -> Result<usize, CliError> {
            let raw = record.get(i).unwrap_or("");
            let v: usize = raw
                .parse()
                .map_err(|_| CliError::data(format!("line {line}: {what} {raw:?} is not a class index")).at_line(&name, line))?;
            if v >= n_t {
                return Err(CliError::data(format!("line {line}: {what} {v} is not below n_t = {n_t}")).at_line(&name, line));
            }
            Ok(v)
        };
        bias.push(cell(bi, "bias")?);
        preds.push(cell(pi, "prediction")?);
    }
    if bias.is_empty() {
        return Err(CliError::data(format!("{name} has no rows")));
    }
    Ok((bias, preds))
}

pub fn cmd_biasness(input: &Path, rho: f64, n_t: usize, eps: f64, out: Option<&Path>) -> Result<(), CliError> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(CliError::config(format!("--rho must be in (0, 1), got {rho}")));
    }
    if n_t < 2 {
        return Err(CliError::config(format!("--n-t must be at least 2, got {n_t}")));
    }
    if !(0.0..=1.0).contains(&eps) {
        return Err(CliError::config(format!("--eps must be in [0, 1], got {eps}")));
    }
    let (bias, preds) = read_predictions(input, n_t)?;
    let joint = empirical_joint(&bias, &preds, n_t).map_err(CliError::from_data)?;
    let report = runtime(estimate_phi(&joint, rho, eps))?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::runtime(e.to_string()))?;
    match out {
        Some(path) => std::fs::write(path, text + "\n").map_err(|e| io_error(path, e)),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

/// Writes `nmi_perfect.csv` and `nmi_levels.csv` into `out`.
pub fn cmd_curves(rho_grid: &[f64], phi_grid: &[f64], n_t: usize, out: &Path) -> Result<(), CliError> {
    if let Some(r) = rho_grid.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
        return Err(CliError::config(format!("rho grid values must be in (0, 1), got {r}")));
    }
    if let Some(p) = phi_grid.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(CliError::config(format!("phi grid values must be in [0, 1], got {p}")));
    }
    if n_t < 3 {
        return Err(CliError::config(format!("--n-t must be at least 3, got {n_t}")));
    }
    std::fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    let perfect = runtime(perfect_curve(rho_grid, n_t))?;
    runtime(write_curve_csv(&out.join("nmi_perfect.csv"), &perfect))?;
    let levels = runtime(level_curves(rho_grid, phi_grid, n_t))?;
    runtime(write_curve_csv(&out.join("nmi_levels.csv"), &levels))?;
    log::info!("wrote {} and {} points to {}", perfect.len(), levels.len(), out.display());
    Ok(())
}
