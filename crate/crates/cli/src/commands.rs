use std::f64::consts::PI;
use std::path::Path;

use covkernel::align::{align_kernel, centered_alignment, random_parameters, target_matrix, AlignmentProblem, TargetKind};
use covkernel::data::{gen_covariant, gen_union_subspaces, load_csv, save_csv, split, CovariantSpec, Dataset, DatasetManifest, SubspaceSpec};
use covkernel::featuremap::{build_entangler, FeatureMapSpec};
use covkernel::kernel::{calibrate, write_matrix_csv, KernelEstimator, Recommendation};
use covkernel::seed;
use covkernel::sim::{Axis, Circuit};
use covkernel::svc::{accuracy, fit_multiclass, grid_search, rbf_matrix, ClassicalKernel, MulticlassModel};
use covkernel::theory::{
    angle_embedding, bell_state, check_covariance, classical_inequality, closed_form_kernel, mc_sphere_inner,
    perturb_state, principal_angles, quantum_subspace_expectations, same_subspace_margins, statevector_kernel,
    verify_orthogonality, verify_prop_group, write_expectations_csv, CovariantStructure, EXACT_TOL,
};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Stream};
use crate::error::{CliError, CliResult};
use crate::manifest::{sha256_file, sha256_json, Workspace};

const DATASET_CSV: &str = "dataset.csv";
const TRAIN_CSV: &str = "train.csv";
const TEST_CSV: &str = "test.csv";
const FIDUCIAL_JSON: &str = "fiducial.json";
const QUANTUM_MODEL_CSV: &str = "model_quantum.csv";
const QUANTUM_MODEL_JSON: &str = "model_quantum.json";
const CLASSICAL_MODEL_CSV: &str = "model_classical.csv";
const CLASSICAL_MODEL_JSON: &str = "model_classical.json";
const SCORES_JSON: &str = "scores.json";
const RECOMMENDATIONS_CSV: &str = "recommendations.csv";
const VERIFY_CSV: &str = "verify_report.csv";

const NEED_DATAGEN: &str = "run `datagen` first";
const NEED_ALIGN: &str = "run `align` first";
const NEED_FIT: &str = "run `fit` first";

/// Statistical checks pass within this many standard errors.
const SIGMAS: f64 = 3.0;

fn load_split(ws: &Workspace, file: &str) -> CliResult<Dataset> {
    Ok(load_csv(&ws.require(file, NEED_DATAGEN)?)?)
}

fn sample_ids(prefix: &str, m: usize) -> Vec<String> {
    (0..m).map(|i| format!("{prefix}{i}")).collect()
}

pub fn datagen(config: &RunConfig) -> CliResult<()> {
    let mut ws = Workspace::open(config)?;
    let manifest = config.dataset.resolve(config.seed(Stream::Dataset));
    let data = match &manifest {
        DatasetManifest::UnionOfSubspaces(spec) => gen_union_subspaces(spec)?.dataset,
        DatasetManifest::Covariant(spec) => gen_covariant(spec)?,
        DatasetManifest::Csv { path } => load_csv(Path::new(path))?,
    };
    let (train, test) = split(&data, config.train_fraction, config.seed(Stream::Split))?;
    save_csv(&data, &ws.output(DATASET_CSV))?;
    save_csv(&train, &ws.output(TRAIN_CSV))?;
    save_csv(&test, &ws.output(TEST_CSV))?;
    manifest.write(&ws.output("dataset_manifest.json"))?;
    println!(
        "dataset: {} samples, {} features, {} classes ({} train / {} test)",
        data.len(),
        data.n_features(),
        data.classes().len(),
        train.len(),
        test.len()
    );
    ws.finish("datagen", config)?;
    Ok(())
}

pub fn calibrate_cmd(config: &RunConfig) -> CliResult<()> {
    let mut ws = Workspace::open(config)?;
    let report = calibrate(&config.calibration_config())?;
    report.write_rows_csv(&ws.output("calibration.csv"))?;
    report.write_recommendations_csv(&ws.output(RECOMMENDATIONS_CSV))?;
    for r in &report.recommendations {
        println!(
            "n = {:>3}  threshold {:.3}  recommended d = {}{}",
            r.n,
            r.threshold,
            r.recommended_d,
            if r.reachable { "" } else { " (threshold unreachable)" }
        );
    }
    ws.finish("calibrate", config)?;
    Ok(())
}

/// Feature map for `data` under the configured coupling and axes.
fn feature_map(config: &RunConfig, data: &Dataset) -> CliResult<FeatureMapSpec> {
    let n = data.n_features();
    let coupling = config.feature_map.coupling.build(n)?;
    let plan = build_entangler(&coupling, n)?;
    Ok(FeatureMapSpec::new(
        plan,
        config.feature_map.axes,
        &data.importance(),
        config.feature_map.angle_scale,
    )?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Fiducial {
    feature_map: FeatureMapSpec,
    lambda: Vec<f64>,
    initial_loss: f64,
    best_loss: f64,
}

pub fn align(config: &RunConfig) -> CliResult<()> {
    let mut ws = Workspace::open(config)?;
    let train = load_split(&ws, TRAIN_CSV)?;
    let spec = feature_map(config, &train)?;
    let problem = AlignmentProblem {
        spec: &spec,
        xs: &train.features,
        labels: &train.labels,
        kernel: config.kernel.clone(),
        noise: config.noise,
        target: config.target,
    };
    let start = random_parameters(spec.n_params(), config.seed(Stream::Fiducial));
    let trace = align_kernel(&problem, &start, &config.spsa)?;
    trace.write_csv(&ws.output("alignment_trace.csv"))?;
    let fiducial = Fiducial {
        feature_map: spec,
        lambda: trace.best_params.clone(),
        initial_loss: trace.losses[0],
        best_loss: trace.best_loss,
    };
    ws.write_json(FIDUCIAL_JSON, &fiducial)?;
    println!(
        "alignment loss {:.6} -> {:.6} over {} iterations",
        fiducial.initial_loss, fiducial.best_loss, config.spsa.iterations
    );
    ws.finish("align", config)?;
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct QuantumScores {
    train_accuracy: f64,
    test_accuracy: Option<f64>,
    tolerance: usize,
    psd_projected: bool,
    min_eigenvalue_before: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ClassicalScores {
    kernel: ClassicalKernel,
    c: f64,
    cv_accuracy: f64,
    train_accuracy: f64,
    test_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct Scores {
    quantum: Option<QuantumScores>,
    classical: Option<ClassicalScores>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ModelMeta {
    fingerprint: String,
    n_train: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ClassicalMeta {
    fingerprint: String,
    n_train: usize,
    kernel: ClassicalKernel,
    c: f64,
}

/// Digest of everything a quantum kernel entry depends on.
fn quantum_fingerprint(config: &RunConfig, fiducial: &Fiducial, train_csv: &Path) -> CliResult<String> {
    sha256_json(&(
        &fiducial.feature_map,
        &fiducial.lambda,
        &config.kernel,
        &config.noise,
        sha256_file(train_csv)?,
    ))
}

fn classical_fingerprint(kernel: &ClassicalKernel, c: f64, train_csv: &Path) -> CliResult<String> {
    sha256_json(&(kernel, c, sha256_file(train_csv)?))
}

/// Reads the fiducial and checks it was aligned for the current feature map.
fn load_fiducial(ws: &Workspace, config: &RunConfig, train: &Dataset) -> CliResult<Fiducial> {
    let fiducial: Fiducial = ws.read_json(FIDUCIAL_JSON, NEED_ALIGN)?;
    if fiducial.feature_map != feature_map(config, train)? {
        return Err(CliError::Integrity(
            "fiducial.json was aligned for a different feature map; rerun `align`".into(),
        ));
    }
    Ok(fiducial)
}

pub fn fit(config: &RunConfig, classical_only: bool) -> CliResult<()> {
    let mut ws = Workspace::open(config)?;
    let train_csv = ws.require(TRAIN_CSV, NEED_DATAGEN)?;
    let train = load_csv(&train_csv)?;
    let mut scores = Scores::default();

    if !classical_only {
        let fiducial = load_fiducial(&ws, config, &train)?;
        let est = KernelEstimator::new(&fiducial.feature_map, &fiducial.lambda, config.noise)?;
        let k = est.assemble_matrix(&train.features, &config.kernel)?;
        let ids = sample_ids("train", train.len());
        write_matrix_csv(&ws.output("kernel_train.csv"), &ids, &ids, &k.values)?;
        let model = fit_multiclass(&k.values, &train.labels, config.svc.c)?;
        model.write_records(&ws.output(QUANTUM_MODEL_CSV))?;
        ws.write_json(
            QUANTUM_MODEL_JSON,
            &ModelMeta {
                fingerprint: quantum_fingerprint(config, &fiducial, &train_csv)?,
                n_train: train.len(),
            },
        )?;
        let q = QuantumScores {
            train_accuracy: accuracy(&model.predict(&k.values)?, &train.labels),
            test_accuracy: None,
            tolerance: k.tolerance,
            psd_projected: k.psd_projected,
            min_eigenvalue_before: k.min_eigenvalue_before,
        };
        println!("quantum train accuracy {:.4}", q.train_accuracy);
        scores.quantum = Some(q);
    }

    if classical_only || config.svc.classical.is_some() {
        let grid_cfg = config.svc.classical.clone().unwrap_or_default();
        let grid: Vec<(ClassicalKernel, f64)> = grid_cfg
            .kernels
            .iter()
            .flat_map(|k| grid_cfg.cs.iter().map(move |&c| (*k, c)))
            .collect();
        let result = grid_search(
            &grid,
            |(kern, c)| Ok((kern.matrix(&train.features)?, *c)),
            &train.labels,
            grid_cfg.folds,
            config.seed(Stream::Folds),
        )?;
        let (kernel, c) = result.best;
        let k = kernel.matrix(&train.features)?;
        let model = fit_multiclass(&k, &train.labels, c)?;
        model.write_records(&ws.output(CLASSICAL_MODEL_CSV))?;
        ws.write_json(
            CLASSICAL_MODEL_JSON,
            &ClassicalMeta {
                fingerprint: classical_fingerprint(&kernel, c, &train_csv)?,
                n_train: train.len(),
                kernel,
                c,
            },
        )?;
        let s = ClassicalScores {
            kernel,
            c,
            cv_accuracy: result.scores[result.best_index],
            train_accuracy: accuracy(&model.predict(&k)?, &train.labels),
            test_accuracy: None,
        };
        println!(
            "classical train accuracy {:.4} (cross-validated {:.4})",
            s.train_accuracy, s.cv_accuracy
        );
        scores.classical = Some(s);
    }
    ws.write_json(SCORES_JSON, &scores)?;
    ws.finish("fit", config)?;
    Ok(())
}

pub fn predict(config: &RunConfig, classical_only: bool) -> CliResult<()> {
    let mut ws = Workspace::open(config)?;
    let train_csv = ws.require(TRAIN_CSV, NEED_DATAGEN)?;
    let train = load_csv(&train_csv)?;
    let test = load_split(&ws, TEST_CSV)?;
    if test.is_empty() {
        return Err(covkernel::Error::Dataset("test set is empty; nothing to predict".into()).into());
    }
    let mut scores: Scores = ws.read_json(SCORES_JSON, NEED_FIT)?;
    let mut quantum_pred = None;
    let mut classical_pred = None;

    if !classical_only {
        let meta: ModelMeta = ws.read_json(QUANTUM_MODEL_JSON, NEED_FIT)?;
        let fiducial = load_fiducial(&ws, config, &train)?;
        if meta.fingerprint != quantum_fingerprint(config, &fiducial, &train_csv)? {
            return Err(CliError::Integrity(
                "quantum model was fitted with a different kernel configuration; rerun `fit`".into(),
            ));
        }
        let est = KernelEstimator::new(&fiducial.feature_map, &fiducial.lambda, config.noise)?;
        let kx = est.assemble_cross_matrix(&test.features, &train.features, &config.kernel)?;
        write_matrix_csv(
            &ws.output("kernel_test.csv"),
            &sample_ids("test", test.len()),
            &sample_ids("train", train.len()),
            &kx,
        )?;
        let model = MulticlassModel::read_records(&ws.require(QUANTUM_MODEL_CSV, NEED_FIT)?, meta.n_train)?;
        let pred = model.predict(&kx)?;
        let acc = accuracy(&pred, &test.labels);
        println!("quantum test accuracy {acc:.4}");
        scores.quantum.get_or_insert_with(QuantumScores::default).test_accuracy = Some(acc);
        quantum_pred = Some(pred);
    }

    let classical_meta = ws.path(CLASSICAL_MODEL_JSON);
    if classical_only || classical_meta.is_file() {
        let meta: ClassicalMeta = ws.read_json(CLASSICAL_MODEL_JSON, NEED_FIT)?;
        if meta.fingerprint != classical_fingerprint(&meta.kernel, meta.c, &train_csv)? {
            return Err(CliError::Integrity(
                "classical model was fitted on a different training set; rerun `fit`".into(),
            ));
        }
        let kx = meta.kernel.cross(&test.features, &train.features)?;
        let model = MulticlassModel::read_records(&ws.require(CLASSICAL_MODEL_CSV, NEED_FIT)?, meta.n_train)?;
        let pred = model.predict(&kx)?;
        let acc = accuracy(&pred, &test.labels);
        println!("classical test accuracy {acc:.4}");
        if let Some(s) = scores.classical.as_mut() {
            s.test_accuracy = Some(acc);
        }
        classical_pred = Some(pred);
    }

    let mut w = csv::Writer::from_path(ws.output("predictions.csv")).map_err(covkernel::Error::from)?;
    w.write_record(["index", "label", "quantum", "classical"]).map_err(covkernel::Error::from)?;
    let cell = |p: &Option<Vec<usize>>, i: usize| p.as_ref().map_or(String::new(), |v| v[i].to_string());
    for i in 0..test.len() {
        w.write_record([
            i.to_string(),
            test.labels[i].to_string(),
            cell(&quantum_pred, i),
            cell(&classical_pred, i),
        ])
        .map_err(covkernel::Error::from)?;
    }
    w.flush().map_err(covkernel::Error::from)?;
    ws.write_json(SCORES_JSON, &scores)?;
    ws.finish("predict", config)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CheckRow {
    check: String,
    passed: bool,
    value: f64,
    reference: f64,
    tolerance: f64,
    /// Distance from the reference in standard errors, for Monte-Carlo checks.
    sigmas: Option<f64>,
}

impl CheckRow {
    fn exact(check: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            check: check.into(),
            passed: value <= tolerance,
            value,
            reference: 0.0,
            tolerance,
            sigmas: None,
        }
    }

    /// Passes when `sigmas` is at most `SIGMAS`.
    fn within(check: impl Into<String>, value: f64, reference: f64, sigmas: f64) -> Self {
        Self {
            check: check.into(),
            passed: sigmas <= SIGMAS,
            value,
            reference,
            tolerance: SIGMAS,
            sigmas: Some(sigmas),
        }
    }

    /// Passes when `sigmas` is at least `SIGMAS`.
    fn separated(check: impl Into<String>, value: f64, reference: f64, sigmas: f64) -> Self {
        Self {
            passed: sigmas >= SIGMAS,
            ..Self::within(check, value, reference, sigmas)
        }
    }
}

fn verify_checks(config: &RunConfig, ws: &mut Workspace, negative_control: bool) -> CliResult<Vec<CheckRow>> {
    let v = &config.verify;
    let master = config.seed(Stream::Verify);
    let mut rng = seed::rng(master, &[0]);
    let mut rows = Vec::new();

    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let classes = rng.random_range(2..=5);
        let m = rng.random_range(4..=30);
        let labels: Vec<usize> = (0..m).map(|i| if i < classes { i } else { rng.random_range(0..classes) }).collect();
        let xs: Vec<Vec<f64>> = (0..m).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let k = rbf_matrix(&xs, 1.0)?;
        let a = centered_alignment(&target_matrix(&labels, TargetKind::ZeroOne)?, &k)?;
        let b = centered_alignment(&target_matrix(&labels, TargetKind::Shifted)?, &k)?;
        worst = worst.max((a - b).abs());
    }
    rows.push(CheckRow::exact("alignment_target_invariance", worst, 1e-10));

    for &d in &v.sphere_dims {
        let e = mc_sphere_inner(d, v.sphere_trials, seed::derive(master, &[1, d as u64]))?;
        let reference = 1.0 / d as f64;
        rows.push(CheckRow::within(format!("sphere_inner_d{d}"), e.mean, reference, e.sigmas_from(reference)));
    }

    let scale = v.closed_form_scale;
    let closed_scale = if negative_control { scale / PI } else { scale };
    let mut worst: f64 = 0.0;
    for n in [2, 6, 12] {
        for _ in 0..v.closed_form_pairs {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            worst = worst.max((closed_form_kernel(&x, &y, closed_scale) - statevector_kernel(&x, &y, scale)?).abs());
        }
    }
    rows.push(CheckRow::exact("closed_form_vs_statevector", worst, 1e-10));

    let expectations = quantum_subspace_expectations(&v.subspace_dims, v.subspace_trials, scale, seed::derive(master, &[2]))?;
    write_expectations_csv(&expectations, &ws.output("subspace_expectations.csv"))?;
    for (d, margin) in same_subspace_margins(&expectations) {
        let same = expectations.iter().find(|r| r.dim == d).map_or(f64::NAN, |r| r.estimate);
        rows.push(CheckRow::separated(format!("same_subspace_above_others_d{d}"), same, 0.0, margin));
    }

    let bell = CovariantSpec::bell(16, seed::derive(master, &[3]));
    let data = gen_covariant(&bell)?;
    let structure = CovariantStructure::bell(bell.theta);
    let samples: Vec<(usize, Circuit)> = data
        .features
        .iter()
        .zip(&data.labels)
        .map(|(x, &l)| (l, angle_embedding(x, Axis::X, 1.0)))
        .collect();
    let cov = check_covariance(&structure, &samples, EXACT_TOL)?;
    rows.push(CheckRow::exact("bell_coset_membership", cov.membership, EXACT_TOL));
    rows.push(CheckRow::exact("bell_phase_invariance", cov.invariance, EXACT_TOL));
    rows.push(CheckRow::exact("bell_coset_orthogonality", cov.orthogonality, EXACT_TOL));
    let group = verify_prop_group(&data, &bell_state(), Axis::X, 1.0, EXACT_TOL)?;
    rows.push(CheckRow::exact("bell_kernel_is_class_indicator", group.max_deviation, EXACT_TOL));

    let mut perturbed = structure.clone();
    perturbed.psi = perturb_state(&perturbed.psi, 0.1, &mut rng)?;
    let broken = check_covariance(&perturbed, &[], EXACT_TOL)?;
    rows.push(CheckRow {
        passed: !broken.passed(),
        ..CheckRow::exact("perturbed_fiducial_detected", broken.orthogonality, EXACT_TOL)
    });

    let pair = gen_union_subspaces(&SubspaceSpec {
        ambient_dim: 10,
        dims: vec![3, 3],
        samples_per_class: 1,
        rotate: true,
        seed: seed::derive(master, &[4]),
    })?;
    let pa = principal_angles(&pair.bases[0], &pair.bases[1])?;
    rows.push(CheckRow::exact("principal_vectors_orthogonal", verify_orthogonality(&pa), 1e-9));
    let ineq = classical_inequality(&pair.bases[0], &pair.bases[1], v.inequality_trials, seed::derive(master, &[5]))?;
    rows.push(CheckRow::within(
        "within_subspace_is_1_over_d",
        ineq.within.mean,
        1.0 / 3.0,
        ineq.within.sigmas_from(1.0 / 3.0),
    ));
    let excess = if ineq.cross.stderr > 0.0 {
        ((ineq.cross.mean - ineq.cross_bound) / ineq.cross.stderr).max(0.0)
    } else {
        0.0
    };
    rows.push(CheckRow::within("cross_subspace_below_angle_bound", ineq.cross.mean, ineq.cross_bound, excess));
    rows.push(CheckRow::separated(
        "within_exceeds_cross",
        ineq.within.mean,
        ineq.cross.mean,
        ineq.separation(),
    ));
    Ok(rows)
}

pub fn verify(config: &RunConfig, negative_control: bool) -> CliResult<()> {
    let mut ws = Workspace::open(config)?;
    let rows = verify_checks(config, &mut ws, negative_control)?;
    let mut w = csv::Writer::from_path(ws.output(VERIFY_CSV)).map_err(covkernel::Error::from)?;
    for r in &rows {
        w.serialize(r).map_err(covkernel::Error::from)?;
        println!(
            "{} {:<36} value {:.6e}{}",
            if r.passed { "PASS" } else { "FAIL" },
            r.check,
            r.value,
            r.sigmas.map_or(String::new(), |s| format!("  ({s:.2} sigma)"))
        );
    }
    w.flush().map_err(covkernel::Error::from)?;
    let failed = rows.iter().filter(|r| !r.passed).count();
    println!("{} of {} checks passed", rows.len() - failed, rows.len());
    ws.finish("verify", config)?;
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct VerifySummary {
    passed: usize,
    failed: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct AlignmentSummary {
    initial_loss: f64,
    best_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct Report {
    scores: Option<Scores>,
    alignment: Option<AlignmentSummary>,
    calibration: Option<Vec<Recommendation>>,
    verify: Option<VerifySummary>,
}

pub fn report(config: &RunConfig) -> CliResult<()> {
    let mut ws = Workspace::open(config)?;
    let mut report = Report::default();
    if ws.path(SCORES_JSON).is_file() {
        report.scores = Some(ws.read_json(SCORES_JSON, NEED_FIT)?);
    }
    if ws.path(FIDUCIAL_JSON).is_file() {
        let f: Fiducial = ws.read_json(FIDUCIAL_JSON, NEED_ALIGN)?;
        report.alignment = Some(AlignmentSummary {
            initial_loss: f.initial_loss,
            best_loss: f.best_loss,
        });
    }
    let rec = ws.path(RECOMMENDATIONS_CSV);
    if rec.is_file() {
        let mut r = csv::Reader::from_path(&rec).map_err(covkernel::Error::from)?;
        let rows = r
            .deserialize()
            .collect::<Result<Vec<Recommendation>, _>>()
            .map_err(covkernel::Error::from)?;
        report.calibration = Some(rows);
    }
    let ver = ws.path(VERIFY_CSV);
    if ver.is_file() {
        let mut r = csv::Reader::from_path(&ver).map_err(covkernel::Error::from)?;
        let mut summary = VerifySummary::default();
        for row in r.deserialize::<CheckRow>() {
            let row = row.map_err(covkernel::Error::from)?;
            if row.passed {
                summary.passed += 1;
            } else {
                summary.failed.push(row.check);
            }
        }
        report.verify = Some(summary);
    }
    if report == Report::default() {
        return Err(CliError::MissingArtifact {
            path: ws.dir.clone(),
            hint: "no stage outputs to report on",
        });
    }
    ws.write_json("report.json", &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    ws.finish("report", config)?;
    Ok(())
}
