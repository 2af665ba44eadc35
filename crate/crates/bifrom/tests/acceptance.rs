//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line (visible with `--nocapture`; failures always surface).
//!
//! Criteria 3, 5 and 6 encode qualitative method orderings; where this
//! model provably cannot reproduce one, the test still asserts the stated
//! requirement and fails honestly rather than loosening the bound.

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use bifrom::ann::{self, Loss, TrainConfig};
use bifrom::cluster;
use bifrom::eval::{self, ErrorField, Method};
use bifrom::fom::{self, FomConfig, ParameterPoint, SnapshotSet};
use bifrom::pod;
use bifrom::podnn::{self, PodNnOptions};
use bifrom::rom::{self, LocalRomSet, SolverChoice};
use bifrom::select::{self, Criterion, ErrorTable, SelectorData};
use bifrom::{x_norm, pipeline};

const HIDDEN: [usize; 2] = [64, 32];
const TOL2: f64 = 1e-6;

fn train_cfg(seed: u64, loss: Loss) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        max_epochs_per_round: 500,
        max_rounds: 20,
        seed,
        loss,
        plateau_tol: 1e-10,
    }
}

struct Density {
    local_ov: LocalRomSet,
    table_ov: ErrorTable,
    classifier_perfect: bool,
    /// mean relative u-field L2 error per method tag over the reference.
    means: BTreeMap<String, f64>,
}

struct Fixture {
    d72: Density,
    d42: Density,
}

fn build_density(cfg: &FomConfig, reference: &SnapshotSet, n1: usize, n2: usize) -> Density {
    let ops = fom::assemble_operators(cfg).unwrap();
    let h = cfg.mesh_width();
    let snapshots = fom::generate_snapshots(cfg, n1, n2, 0).unwrap();
    let clustering = cluster::kmeans(&snapshots.matrix, h, &snapshots.params, 8, 0, 8).unwrap();
    let bases_ov = cluster::enrich_overlap(&snapshots, h, &clustering, 1e-4, TOL2, true).unwrap();
    let bases_no = cluster::enrich_overlap(&snapshots, h, &clustering, 1e-4, TOL2, false).unwrap();
    let local_ov = rom::assemble_local_roms(&bases_ov, &clustering, &ops);
    let local_no = rom::assemble_local_roms(&bases_no, &clustering, &ops);
    let global_basis = pod::compute_pod(&snapshots.matrix, h, 1e-6).unwrap();
    let global = rom::assemble_reduced(&global_basis, &ops);
    let table_ov = select::build_error_table(&local_ov, &snapshots);
    let table_no = select::build_error_table(&local_no, &snapshots);
    let selector = SelectorData::new(cfg, &snapshots, &clustering);

    let inputs = DMatrix::from_fn(2, snapshots.len(), |i, j| {
        cfg.normalize_param(snapshots.params[j])[i]
    });
    let classifier = ann::train_classifier(
        &inputs,
        &clustering.labels,
        &[2, HIDDEN[0], HIDDEN[1], 8],
        &train_cfg(1, Loss::CrossEntropy),
    )
    .unwrap();
    let regression_ov = ann::train_regressor(
        &inputs,
        &select::regression_targets(&table_ov).transpose(),
        &[2, HIDDEN[0], HIDDEN[1], 8],
        &train_cfg(2, Loss::MeanSquaredError),
    )
    .unwrap();
    let regression_no = ann::train_regressor(
        &inputs,
        &select::regression_targets(&table_no).transpose(),
        &[2, HIDDEN[0], HIDDEN[1], 8],
        &train_cfg(2, Loss::MeanSquaredError),
    )
    .unwrap();
    let oracle_labels =
        select::oracle_selection(cfg, SolverChoice::Newton, &local_ov, &snapshots, reference);
    let oracle = select::oracle_criterion(cfg, reference, oracle_labels);

    let model = podnn::build_podnn(
        cfg,
        &snapshots,
        &PodNnOptions {
            energy_tol: 1e-6,
            hidden: HIDDEN,
            validation_fraction: 0.0,
        },
        &train_cfg(11, Loss::MeanSquaredError),
    )
    .unwrap();

    let criteria: Vec<(String, Criterion)> = vec![
        ("centroid".into(), Criterion::ParameterCentroid),
        ("closest-snapshot".into(), Criterion::ClosestSnapshot),
        ("classifier".into(), Criterion::ClassifierAnn(classifier.net.clone())),
        ("regression".into(), Criterion::RegressionAnnJoint(regression_ov.net.clone())),
        ("oracle".into(), oracle),
    ];
    let regression_no_criterion = Criterion::RegressionAnnJoint(regression_no.net.clone());

    let mut methods: Vec<(Method, usize)> = vec![(
        Method::Global {
            rom: &global,
            snapshots: &snapshots,
        },
        snapshots.len(),
    )];
    for (_, criterion) in &criteria {
        methods.push((
            Method::Local {
                set: &local_ov,
                snapshots: &snapshots,
                selector: &selector,
                criterion,
            },
            snapshots.len(),
        ));
    }
    methods.push((
        Method::Local {
            set: &local_no,
            snapshots: &snapshots,
            selector: &selector,
            criterion: &regression_no_criterion,
        },
        snapshots.len(),
    ));
    methods.push((Method::PodNn(&model), snapshots.len()));

    let reports = eval::compare_methods(
        cfg,
        SolverChoice::Newton,
        &methods,
        reference,
        ErrorField::UField,
    );
    let mut means = BTreeMap::new();
    means.insert("global".into(), reports[0].mean_l2);
    for (idx, (tag, _)) in criteria.iter().enumerate() {
        means.insert(format!("local+{tag}"), reports[1 + idx].mean_l2);
    }
    means.insert(
        "local+regression-no-overlap".into(),
        reports[1 + criteria.len()].mean_l2,
    );
    means.insert("podnn".into(), reports[2 + criteria.len()].mean_l2);

    Density {
        local_ov,
        table_ov,
        classifier_perfect: classifier.perfect_match,
        means,
    }
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let cfg = FomConfig::default();
        let reference = fom::generate_snapshots(&cfg, 40, 41, 0).unwrap();
        let d72 = build_density(&cfg, &reference, 8, 9);
        let d42 = build_density(&cfg, &reference, 6, 7);
        Fixture { d72, d42 }
    })
}

#[test]
fn criterion_01_pitchfork_fidelity() {
    let cfg = FomConfig::default();
    let start = Instant::now();
    let crit = fom::critical_mu1(&cfg, 0.1);
    let mut sweep = Vec::new();
    for i in 0..40 {
        let mu1 = cfg.mu1_min + (cfg.mu1_max - cfg.mu1_min) * i as f64 / 39.0;
        let sol = fom::steady_solve(&cfg, ParameterPoint::new(mu1, 0.1), &cfg.bias_guess()).unwrap();
        assert!(sol.converged);
        sweep.push((mu1, fom::probe(&sol.state)));
    }
    let elapsed = start.elapsed();
    // Branch amplitude grows like sqrt(mu1 - mu1*): fit probe^2 linearly on
    // the first nonzero sweep points and extrapolate to zero.
    let nonzero: Vec<(f64, f64)> = sweep
        .iter()
        .filter(|(_, p)| *p > 1e-4)
        .take(4)
        .map(|&(x, p)| (x, p * p))
        .collect();
    assert!(nonzero.len() >= 2, "no branch detected along mu2=0.1");
    let n = nonzero.len() as f64;
    let xbar = nonzero.iter().map(|(x, _)| x).sum::<f64>() / n;
    let ybar = nonzero.iter().map(|(_, y)| y).sum::<f64>() / n;
    let slope = nonzero
        .iter()
        .map(|(x, y)| (x - xbar) * (y - ybar))
        .sum::<f64>()
        / nonzero.iter().map(|(x, _)| (x - xbar).powi(2)).sum::<f64>();
    let onset = xbar - ybar / slope;
    let rel = (onset - crit).abs() / crit;
    assert!(
        elapsed.as_secs_f64() < 30.0,
        "ACCEPTANCE 1 pitchfork-fidelity: FAIL (sweep took {elapsed:.2?})"
    );
    assert!(
        rel <= 0.02,
        "ACCEPTANCE 1 pitchfork-fidelity: FAIL (onset {onset:.5} vs {crit:.5}, rel {rel:.3e})"
    );
    println!(
        "ACCEPTANCE 1 pitchfork-fidelity: PASS (onset {onset:.5}, critical {crit:.5}, rel {rel:.2e}, sweep {elapsed:.2?})"
    );
}

#[test]
fn criterion_02_oracle_equivalence() {
    let cfg = FomConfig::default();
    let ops = fom::assemble_operators(&cfg).unwrap();
    let h = cfg.mesh_width();
    let n2 = cfg.state_len();
    let basis = pod::Basis {
        modes: DMatrix::identity(n2, n2) / h.sqrt(),
        singular_values: vec![1.0; n2],
        energy_tol: 0.0,
        weight: h,
    };
    let reduced = rom::assemble_reduced(&basis, &ops);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let p = ParameterPoint::new(
            cfg.mu1_min + (cfg.mu1_max - cfg.mu1_min) * rng.random::<f64>(),
            cfg.mu2_min + (cfg.mu2_max - cfg.mu2_min) * rng.random::<f64>(),
        );
        let marched = fom::steady_solve(&cfg, p, &cfg.bias_guess()).unwrap();
        let truth = fom::newton_solve(&cfg, p, &marched.state).unwrap();
        let a0 = pod::project(&basis, &marched.state);
        let sol = rom::rom_solve(&reduced, p, &a0).unwrap();
        assert!(sol.converged, "full-basis ROM did not converge at {p:?}");
        let err = x_norm(h, &(rom::lift(&reduced, &sol) - &truth.state));
        worst = worst.max(err);
        assert!(
            err <= 1e-8,
            "ACCEPTANCE 2 oracle-equivalence: FAIL (X-error {err:.3e} at {p:?})"
        );
    }
    println!("ACCEPTANCE 2 oracle-equivalence: PASS (worst X-error {worst:.3e} over 10 points)");
}

#[test]
fn criterion_03_consistency_at_snapshots() {
    let f = fixture();
    let d = &f.d72;
    let bound = 10.0 * TOL2.sqrt();
    let mut worst: (f64, usize) = (0.0, 0);
    let mut violations = Vec::new();
    for (i, &label) in d.local_ov.clustering.labels.iter().enumerate() {
        let err = d.table_ov.values[(i, label)];
        if err > worst.0 {
            worst = (err, i);
        }
        if err > bound {
            violations.push((i, err));
        }
    }
    assert!(
        violations.is_empty(),
        "ACCEPTANCE 3 consistency-at-snapshots: FAIL ({} of 72 snapshots exceed {bound:.1e}: {:?})",
        violations.len(),
        violations
            .iter()
            .map(|(i, e)| format!("#{i}:{e:.2e}"))
            .collect::<Vec<_>>()
    );
    println!(
        "ACCEPTANCE 3 consistency-at-snapshots: PASS (worst {:.3e} at snapshot {}, bound {bound:.1e})",
        worst.0, worst.1
    );
}

#[test]
fn criterion_04_overlap_benefit() {
    let f = fixture();
    let with = f.d72.means["local+regression"];
    let without = f.d72.means["local+regression-no-overlap"];
    let ratio = without / with;
    assert!(
        with < without,
        "ACCEPTANCE 4 overlap-benefit: FAIL (with {with:.3e} !< without {without:.3e})"
    );
    assert!(
        ratio >= 2.0,
        "ACCEPTANCE 4 overlap-benefit: FAIL (ratio {ratio:.2} below the expected factor 2)"
    );
    println!(
        "ACCEPTANCE 4 overlap-benefit: PASS (regression criterion: with {with:.3e} < without {without:.3e}, ratio {ratio:.1})"
    );
}

#[test]
fn criterion_05_criterion_ordering() {
    let f = fixture();
    let m = &f.d72.means;
    assert!(f.d72.classifier_perfect, "classifier premise: no perfect match");
    let regression = m["local+regression"];
    let classifier = m["local+classifier"];
    let closest = m["local+closest-snapshot"];
    let centroid = m["local+centroid"];
    let oracle = m["local+oracle"];
    println!(
        "ACCEPTANCE 5 measured means: regression {regression:.4e}, classifier {classifier:.4e}, closest {closest:.4e}, centroid {centroid:.4e}, oracle {oracle:.4e}"
    );

    let slack = 1.05;
    let others = [
        ("regression", regression),
        ("classifier", classifier),
        ("closest-snapshot", closest),
        ("centroid", centroid),
    ];
    for (tag, value) in others {
        assert!(
            oracle <= value + 1e-15,
            "ACCEPTANCE 5 criterion-ordering: FAIL (oracle {oracle:.3e} beaten by {tag} {value:.3e})"
        );
    }
    assert!(
        regression <= slack * classifier,
        "ACCEPTANCE 5 criterion-ordering: FAIL (regression {regression:.3e} > 1.05x classifier {classifier:.3e})"
    );
    assert!(
        classifier <= slack * closest,
        "ACCEPTANCE 5 criterion-ordering: FAIL (classifier {classifier:.3e} > 1.05x closest {closest:.3e})"
    );
    assert!(
        closest <= slack * centroid,
        "ACCEPTANCE 5 criterion-ordering: FAIL (closest {closest:.3e} > 1.05x centroid {centroid:.3e}; \
         the centroid rule is near-optimal on this model because mis-assignments below the critical \
         curve cost nothing)"
    );
    println!("ACCEPTANCE 5 criterion-ordering: PASS");
}

#[test]
fn criterion_06_method_ordering() {
    let f = fixture();
    let local42 = f.d42.means["local+regression"];
    let global42 = f.d42.means["global"];
    let podnn42 = f.d42.means["podnn"];
    let local72 = f.d72.means["local+regression"];
    let podnn72 = f.d72.means["podnn"];
    println!(
        "ACCEPTANCE 6 measured: 42 samples: global {global42:.4e}, local+regression {local42:.4e} (factor {:.1}), podnn {podnn42:.4e}; 72 samples: local+regression {local72:.4e}, podnn {podnn72:.4e}",
        global42 / local42
    );
    assert!(
        local42 <= 0.1 * global42,
        "ACCEPTANCE 6 method-ordering: FAIL (local+regression {local42:.3e} > 0.1x global {global42:.3e})"
    );
    for (density, podnn, local) in [(42, podnn42, local42), (72, podnn72, local72)] {
        assert!(
            podnn <= local,
            "ACCEPTANCE 6 method-ordering: FAIL (podnn {podnn:.3e} > local+regression {local:.3e} at {density} samples; \
             the surrogate's own basis projection floor exceeds the local ROM error on this model)"
        );
    }
    println!("ACCEPTANCE 6 method-ordering: PASS");
}

#[test]
fn criterion_07_gradient_checks() {
    // MLP backpropagation against central finite differences, both losses.
    let mut worst_mlp: f64 = 0.0;
    for (loss, output, seed) in [
        (Loss::MeanSquaredError, ann::OutputMode::Linear, 41u64),
        (Loss::CrossEntropy, ann::OutputMode::Softmax, 42),
    ] {
        let net = ann::mlp_init(&[2, 6, 4, 3], output, seed).unwrap();
        let inputs = DMatrix::from_fn(2, 5, |i, j| 0.13 + 0.17 * (i + 2 * j) as f64 % 1.0);
        let targets = match loss {
            Loss::CrossEntropy => ann::one_hot(&[0, 2, 1, 0, 2], 3).unwrap(),
            Loss::MeanSquaredError => DMatrix::from_fn(3, 5, |i, j| ((i * 5 + j) as f64).sin()),
        };
        let (_, grads) = ann::loss_grad(&net, &inputs, &targets, loss).unwrap();
        let eps = 1e-6;
        for l in 0..net.weights.len() {
            for i in 0..net.weights[l].nrows() {
                for j in 0..net.weights[l].ncols() {
                    let mut plus = net.clone();
                    let mut minus = net.clone();
                    plus.weights[l][(i, j)] += eps;
                    minus.weights[l][(i, j)] -= eps;
                    let (lp, _) = ann::loss_grad(&plus, &inputs, &targets, loss).unwrap();
                    let (lm, _) = ann::loss_grad(&minus, &inputs, &targets, loss).unwrap();
                    let fd = (lp - lm) / (2.0 * eps);
                    let g = grads.d_weights[l][(i, j)];
                    worst_mlp = worst_mlp.max((fd - g).abs() / g.abs().max(1e-4));
                }
            }
        }
    }
    assert!(
        worst_mlp <= 1e-5,
        "ACCEPTANCE 7 gradient-checks: FAIL (MLP gradient mismatch {worst_mlp:.2e})"
    );

    // Reduced Newton Jacobian against finite differences of the residual.
    let cfg = FomConfig {
        n_interior: 31,
        ..FomConfig::default()
    };
    let ops = fom::assemble_operators(&cfg).unwrap();
    let set = fom::generate_snapshots(&cfg, 5, 4, 0).unwrap();
    let basis = pod::compute_pod(&set.matrix, cfg.mesh_width(), 1e-10).unwrap();
    let reduced = rom::assemble_reduced(&basis, &ops);
    let p = ParameterPoint::new(1.35, 0.11);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_rom: f64 = 0.0;
    for _ in 0..3 {
        let a = DVector::from_fn(reduced.dim(), |_, _| rng.random::<f64>() - 0.5);
        let jac = rom::reduced_jacobian(&reduced, p, &a);
        let eps = 1e-6;
        for j in 0..reduced.dim() {
            let mut ap = a.clone();
            let mut am = a.clone();
            ap[j] += eps;
            am[j] -= eps;
            let col = (rom::reduced_residual(&reduced, p, &ap)
                - rom::reduced_residual(&reduced, p, &am))
                / (2.0 * eps);
            for i in 0..reduced.dim() {
                worst_rom = worst_rom
                    .max((col[i] - jac[(i, j)]).abs() / jac[(i, j)].abs().max(1.0));
            }
        }
    }
    assert!(
        worst_rom <= 1e-6,
        "ACCEPTANCE 7 gradient-checks: FAIL (reduced Jacobian mismatch {worst_rom:.2e})"
    );
    println!(
        "ACCEPTANCE 7 gradient-checks: PASS (MLP {worst_mlp:.2e} <= 1e-5, reduced Jacobian {worst_rom:.2e} <= 1e-6)"
    );
}

#[test]
fn criterion_08_kmeans_properties() {
    let cfg = FomConfig {
        n_interior: 31,
        ..FomConfig::default()
    };
    let set = fom::generate_snapshots(&cfg, 6, 5, 0).unwrap();
    let h = cfg.mesh_width();
    let runs: Vec<_> = (0..3)
        .map(|_| cluster::kmeans(&set.matrix, h, &set.params, 6, 17, 5).unwrap())
        .collect();
    for clustering in &runs {
        assert!(
            clustering
                .energy_trace
                .windows(2)
                .all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-15),
            "ACCEPTANCE 8 kmeans: FAIL (energy increased within a restart: {:?})",
            clustering.energy_trace
        );
    }
    for other in &runs[1..] {
        let bits_equal = runs[0].energy.to_bits() == other.energy.to_bits()
            && runs[0].labels == other.labels
            && runs[0]
                .state_centroids
                .iter()
                .zip(other.state_centroids.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(
            bits_equal,
            "ACCEPTANCE 8 kmeans: FAIL (seeded runs are not bit-identical)"
        );
    }
    println!(
        "ACCEPTANCE 8 kmeans: PASS (nonincreasing energy over {} iterations, 3 runs bit-identical)",
        runs[0].energy_trace.len()
    );
}

#[test]
fn criterion_09_persistence_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..100 {
        let rows = rng.random_range(0..12);
        let cols = rng.random_range(0..12);
        let matrix = DMatrix::from_fn(rows, cols, |_, _| match rng.random_range(0..12) {
            0 => f64::NAN,
            1 => -0.0,
            2 => f64::INFINITY,
            3 => f64::NEG_INFINITY,
            4 => f64::from_bits(0x7ff8_0000_dead_beef), // NaN with payload
            _ => 1e6 * (rng.random::<f64>() - 0.5),
        });
        let path = dir.path().join(format!("case_{case}.mat"));
        pipeline::save_matrix(&path, &matrix).unwrap();
        let back = pipeline::load_matrix(&path).unwrap();
        let identical = matrix.nrows() == back.nrows()
            && matrix.ncols() == back.ncols()
            && matrix
                .iter()
                .zip(back.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(
            identical,
            "ACCEPTANCE 9 persistence: FAIL (case {case}, {rows}x{cols} not bit-exact)"
        );
    }
    println!("ACCEPTANCE 9 persistence: PASS (100 randomized matrices bit-exact)");
}

#[test]
fn criterion_10_end_to_end_pipeline() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("acceptance.cfg");
    std::fs::write(&config_path, "ann_hidden1=64\nann_hidden2=32\n").unwrap();
    let sequence: Vec<Vec<&str>> = vec![
        vec!["snapshots"],
        vec!["reference"],
        vec!["build", "--method", "global"],
        vec!["build", "--method", "local", "--criterion", "all"],
        vec!["build", "--method", "podnn"],
        vec!["evaluate", "--method", "local", "--criterion", "regression"],
        vec!["compare"],
        vec!["plot"],
    ];
    let mut digests: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
    for round in 0..2 {
        let ws = dir.path().join(format!("run{round}"));
        for args in &sequence {
            let out = std::process::Command::new(env!("CARGO_BIN_EXE_bifrom"))
                .arg("--workspace")
                .arg(&ws)
                .arg("--config")
                .arg(&config_path)
                .args(args)
                .env_remove("BIFROM_SEED")
                .output()
                .unwrap();
            assert_eq!(
                out.status.code(),
                Some(0),
                "ACCEPTANCE 10 end-to-end: FAIL ({args:?}: {})",
                String::from_utf8_lossy(&out.stderr)
            );
        }
        let mut names: Vec<String> = std::fs::read_dir(&ws)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| n != ".lock")
            .collect();
        names.sort();
        digests.push(
            names
                .iter()
                .map(|n| (n.clone(), std::fs::read(ws.join(n)).unwrap()))
                .collect(),
        );
    }
    let elapsed = start.elapsed();
    assert_eq!(digests[0].len(), digests[1].len());
    for (a, b) in digests[0].iter().zip(&digests[1]) {
        assert_eq!(a.0, b.0);
        assert!(
            a.1 == b.1,
            "ACCEPTANCE 10 end-to-end: FAIL (artifact {} differs between reruns)",
            a.0
        );
    }
    assert!(
        elapsed.as_secs_f64() < 600.0,
        "ACCEPTANCE 10 end-to-end: FAIL (two full runs took {elapsed:.1?}, budget 10 min per run)"
    );
    println!(
        "ACCEPTANCE 10 end-to-end: PASS (two byte-identical full runs, {} artifacts, total {elapsed:.1?})",
        digests[0].len()
    );
}
