//! Acceptance criteria. Each test prints one `[PASS]` / `[FAIL]` line to
//! stderr (bypassing the harness capture) and then asserts.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use faer::Mat;
use opinf_core::dynamics::{lorenz63_rhs, LORENZ63_BETA, LORENZ63_RHO, LORENZ63_SIGMA};
use opinf_core::integrate::{integrate, IntegratorSpec};
use opinf_core::metrics::{aggregate_vpt, nrmse, nrmse_values, nrse_field, relative_l2, vpt, MetricSeries};
use opinf_core::opinf::{
    build_gamma, exact_derivatives, feature_count, fit_pseudoinverse, gram_accumulate, pack_operators,
    solve_regularized, GridSpec, MemoryBudget, RegularizerSpec,
};
use opinf_core::pipeline::{
    self, cmd_evaluate, cmd_forecast, cmd_generate, cmd_plot, cmd_reduce, cmd_restart_check, cmd_train,
    ks_continuation, split_ranges, EvaluationReport, ExperimentConfig, ReductionConfig, SolverConfig, SystemConfig,
};
use opinf_core::reduction::{fit_pca, projection_error, RankTarget};
use opinf_core::spectral::{ks_initial_condition, KsSolver};
use opinf_core::{DataMatrixDims, KsConfig, SnapshotContainer, SnapshotMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(n: u32, name: &str, pass: bool, detail: &str, elapsed: Duration, budget: Duration) {
    let ok = pass && elapsed <= budget;
    let line = format!(
        "[{}] criterion {n:>2} ({name}): {detail}; {:.2} s of {} s\n",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
    assert!(ok, "{}", line.trim_end());
}

fn config(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path).unwrap()
}

fn random_mat(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat<f64> {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn rel_frob(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    (a - b).norm_l2() / b.norm_l2()
}

#[test]
fn criterion_01_lorenz63_operator_recovery() {
    let start = Instant::now();
    let (s, r, b) = (LORENZ63_SIGMA, LORENZ63_RHO, LORENZ63_BETA);
    let spec = IntegratorSpec::adaptive(1e-10, 1e-12, 0.002);
    let rhs = |x: &[f64], dx: &mut [f64]| dx.copy_from_slice(&lorenz63_rhs(x, s, r, b).unwrap());
    // 10 s transient, then 20000 samples
    let traj = integrate(|_, x, dx| rhs(x, dx), &[1.0, 1.0, 1.0], 0.0, 10.0 + 19999.0 * 0.002, &spec).unwrap();
    let q = traj.data().subcols(5000, 20000).to_owned();
    let dq = exact_derivatives(&q, rhs);
    let ops = fit_pseudoinverse(&q, None, &dq, MemoryBudget::default()).unwrap();

    // true operators, quadratic columns ordered x², xy, xz, y², yz, z²
    let mut want = Mat::<f64>::zeros(3, 1 + 3 + 6);
    let a = [[-s, s, 0.0], [r, -1.0, 0.0], [0.0, 0.0, -b]];
    for i in 0..3 {
        for j in 0..3 {
            want[(i, 1 + j)] = a[i][j];
        }
    }
    want[(1, 4 + 2)] = -1.0; // dy: -x z
    want[(2, 4 + 1)] = 1.0; // dz: +x y
    let m = &ops.model;
    let got = Mat::from_fn(3, 10, |i, j| match j {
        0 => m.c[i],
        1..=3 => m.a[(i, j - 1)],
        _ => m.h[(i, j - 4)],
    });
    let err = rel_frob(&got, &want);
    verdict(
        1,
        "Lorenz 63 operator recovery",
        q.ncols() == 20000 && err < 1e-8,
        &format!("relative Frobenius error {err:.2e} < 1e-8"),
        start.elapsed(),
        Duration::from_secs(5),
    );
}

#[test]
fn criterion_02_lorenz96_desk_vpt() {
    let start = Instant::now();
    let cfg = config("lorenz96_f8_desk.json");
    assert_eq!(cfg.runs(), 10);
    let dir = tempfile::tempdir().unwrap();
    let report = pipeline::run_all(&cfg, dir.path()).unwrap();
    let s = report.summary;
    // 500 s of training per repetition
    let train = split_ranges(100001, &cfg.splits).unwrap().train;
    verdict(
        2,
        "Lorenz 96 desk-scale VPT",
        report.forecasts.len() == 10 && s.mean >= 5.0 && s.max >= 8.0,
        &format!(
            "{} train samples/run, VPT min {:.2} max {:.2} mean {:.2} std {:.2}; need mean >= 5, max >= 8",
            train.len(),
            s.min,
            s.max,
            s.mean,
            s.std
        ),
        start.elapsed(),
        Duration::from_secs(600),
    );
}

/// Dense `[1, q, q_i q_j (i <= j), u]` rows, written out independently of the library.
fn explicit_data_matrix(q: &Mat<f64>, u: &Mat<f64>) -> Mat<f64> {
    let (r, k, m) = (q.nrows(), q.ncols(), u.nrows());
    let d = 1 + r + r * (r + 1) / 2 + m;
    let mut out = Mat::<f64>::zeros(k, d);
    for t in 0..k {
        let mut c = 0;
        out[(t, c)] = 1.0;
        c += 1;
        for i in 0..r {
            out[(t, c)] = q[(i, t)];
            c += 1;
        }
        for i in 0..r {
            for j in i..r {
                out[(t, c)] = q[(i, t)] * q[(j, t)];
                c += 1;
            }
        }
        for i in 0..m {
            out[(t, c)] = u[(i, t)];
            c += 1;
        }
    }
    out
}

#[test]
fn criterion_03_gram_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (r, m, k) = (8, 1, 5000);
    let q = random_mat(r, k, &mut rng);
    let u = random_mat(m, k, &mut rng);
    let rhat = random_mat(r, k, &mut rng);
    let d = explicit_data_matrix(&q, &u);
    let mut dtd = Mat::<f64>::zeros(d.ncols(), d.ncols());
    let mut dtr = Mat::<f64>::zeros(d.ncols(), r);
    for t in 0..k {
        for a in 0..d.ncols() {
            let da = d[(t, a)];
            for b in 0..d.ncols() {
                dtd[(a, b)] += da * d[(t, b)];
            }
            for b in 0..r {
                dtr[(a, b)] += da * rhat[(b, t)];
            }
        }
    }
    let mut worst: f64 = 0.0;
    for batch in [5000, 512, 7] {
        let ne = gram_accumulate(&q, Some(&u), &rhat, batch, MemoryBudget::default()).unwrap();
        worst = worst.max(rel_frob(&ne.gram, &dtd)).max(rel_frob(&ne.cross, &dtr));
    }
    verdict(
        3,
        "Gram equivalence",
        worst < 1e-10,
        &format!("worst relative Frobenius difference over batches 5000/512/7: {worst:.2e} < 1e-10"),
        start.elapsed(),
        Duration::from_secs(10),
    );
}

#[test]
fn criterion_04_regularized_matches_pseudoinverse() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (r, k) = (6, 2000);
    let q = random_mat(r, k, &mut rng);
    let d = explicit_data_matrix(&q, &Mat::zeros(0, k));
    let o_true = random_mat(d.ncols(), r, &mut rng);
    let noise = random_mat(k, r, &mut rng);
    let rhs_t = &d * &o_true + noise * 1e-3;
    let rhat = rhs_t.transpose().to_owned();
    let ne = gram_accumulate(&q, None, &rhat, 512, MemoryBudget::default()).unwrap();
    let reg = solve_regularized(&ne, &RegularizerSpec::uniform(1e-12).unwrap()).unwrap();
    let pinv = fit_pseudoinverse(&q, None, &rhat, MemoryBudget::default()).unwrap();
    let diff = rel_frob(&pack_operators(&reg.model), &pack_operators(&pinv.model));
    verdict(
        4,
        "regularized vs pseudoinverse",
        diff < 1e-8,
        &format!("relative difference {diff:.2e} < 1e-8 (lambda = 1e-12, d = {})", d.ncols()),
        start.elapsed(),
        Duration::from_secs(5),
    );
}

#[test]
fn criterion_05_etdrk4_order() {
    let start = Instant::now();
    let run = |dt: f64| {
        let cfg = KsConfig {
            dt,
            t_final: 2.0,
            ..KsConfig::default()
        };
        let mut s = KsSolver::new(&cfg, &ks_initial_condition(&cfg)).unwrap();
        for _ in 0..cfg.n_steps().unwrap() {
            s.step().unwrap();
        }
        s.field()
    };
    let (a, b, c) = (run(0.25), run(0.125), run(0.0625));
    let dist = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    let slope = (dist(&a, &b) / dist(&b, &c)).log2();
    verdict(
        5,
        "ETDRK4 order",
        (3.5..=4.5).contains(&slope),
        &format!("self-convergence slope {slope:.3} in [3.5, 4.5]"),
        start.elapsed(),
        Duration::from_secs(30),
    );
}

struct KsDesk {
    dir: tempfile::TempDir,
    cfg: ExperimentConfig,
    report: EvaluationReport,
    elapsed: Duration,
}

fn ks_desk() -> &'static KsDesk {
    static CELL: OnceLock<KsDesk> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = config("ks_desk.json");
        let dir = tempfile::tempdir().unwrap();
        let start = Instant::now();
        let report = pipeline::run_all(&cfg, dir.path()).unwrap();
        KsDesk {
            dir,
            cfg,
            report,
            elapsed: start.elapsed(),
        }
    })
}

#[test]
fn criterion_06_ks_desk_end_to_end() {
    let ks = ks_desk();
    let reduce: pipeline::ReduceReport = pipeline::read_json(&ks.dir.path().join("reduce_000.json")).unwrap();
    let train: pipeline::TrainReport = pipeline::read_json(&ks.dir.path().join("train_000.json")).unwrap();
    let s = ks.report.summary;
    let reg = train.regularizer.unwrap();
    verdict(
        6,
        "KS desk-scale end-to-end",
        ks.report.forecasts.len() == 10 && train.candidates == 25 && s.max >= 1.0,
        &format!(
            "r = {} (tau 0.9999), best (lambda2, lambda3) = ({:e}, {:e}), VPT max {:.2} mean {:.2} over {} ICs; need max >= 1",
            reduce.r,
            reg.lambda2,
            reg.lambda3,
            s.max,
            s.mean,
            ks.report.forecasts.len()
        ),
        ks.elapsed,
        Duration::from_secs(1800),
    );
}

#[test]
fn criterion_07_dimension_and_gamma_bookkeeping() {
    let start = Instant::now();
    let d160 = DataMatrixDims { r: 160, m: 0, k: 1 }.d();
    let mut ok = d160 == 13041 && feature_count(160, 0) == 13041;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let spec = RegularizerSpec::new(1.0, 2.0, 3.0, 4.0).unwrap();
    for _ in 0..20 {
        let r = rng.random_range(1..60usize);
        let m = rng.random_range(0..5usize);
        let g = build_gamma(&spec, &DataMatrixDims { r, m, k: 1 });
        // count each block's weight, and check the blocks appear in order
        let counts: Vec<usize> = [1.0, 2.0, 3.0, 4.0].iter().map(|w| g.iter().filter(|v| *v == w).count()).collect();
        let mut quad = 0;
        for i in 0..r {
            for _ in i..r {
                quad += 1;
            }
        }
        ok &= counts == vec![1, r, quad, m];
        ok &= g.windows(2).all(|w| w[0] <= w[1]);
        ok &= g.len() == 1 + r + quad + m;
    }
    verdict(
        7,
        "d(r, m) and Gamma bookkeeping",
        ok,
        &format!("d(160, 0) = {d160}; 20 random (r, m) segment counts match"),
        start.elapsed(),
        Duration::from_secs(1),
    );
}

#[test]
fn criterion_08_metrics_oracles() {
    let start = Instant::now();
    let mut ok = true;
    let row = |v: &[f64]| Mat::from_fn(1, v.len(), |_, j| v[j]);
    // n = 1, sigma = 2, error 1 -> 0.5
    ok &= nrmse_values(&row(&[0.0]), &row(&[1.0]), &[2.0]).unwrap() == vec![0.5];
    // n = 2, errors (3, 4) -> sqrt(12.5)
    let t = Mat::<f64>::zeros(2, 1);
    let p = Mat::from_fn(2, 1, |i, _| [3.0, 4.0][i]);
    ok &= nrmse_values(&t, &p, &[1.0, 1.0]).unwrap() == vec![12.5f64.sqrt()];
    ok &= nrse_field(&row(&[0.0]), &row(&[2.0]), &[2.0]).unwrap()[(0, 0)] == 1.0;
    // prefix rule
    let s = MetricSeries::new(vec![0.0, 1.0, 2.0, 3.0], vec![0.1, 0.3, 0.6, 0.4], 2.0).unwrap();
    ok &= vpt(&s, 0.5) == 2.0;
    let s = MetricSeries::new(vec![0.0, 1.0], vec![0.7, 0.1], 2.0).unwrap();
    ok &= vpt(&s, 0.5) == 0.0;
    let s = MetricSeries::new(vec![0.0, 1.0, 2.0], vec![0.1, 0.2, 0.3], 1.5).unwrap();
    ok &= vpt(&s, 0.5) == 3.0;
    let a = aggregate_vpt(&[1.0, 3.0]).unwrap();
    ok &= (a.min, a.max, a.mean, a.std) == (1.0, 3.0, 2.0, 1.0);
    let a = aggregate_vpt(&[5.0, 5.0, 5.0]).unwrap();
    ok &= (a.min, a.max, a.mean, a.std) == (5.0, 5.0, 5.0, 0.0);
    ok &= relative_l2(&p, &Mat::zeros(2, 1)).unwrap() == 1.0;
    // perfect forecast over the horizon
    let truth = Mat::from_fn(3, 11, |i, j| ((i + j) as f64).sin());
    let times: Vec<f64> = (0..11).map(|j| j as f64 * 0.5).collect();
    let perfect = nrmse(&truth, &truth, &[1.0; 3], &times, 0.2).unwrap();
    ok &= (vpt(&perfect, 0.5) - 5.0 * 0.2).abs() < 1e-15;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut monotone = 0;
    for _ in 0..100 {
        let n = rng.random_range(1..80usize);
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.5)).collect();
        let times: Vec<f64> = (0..n).map(|j| j as f64 * 0.1).collect();
        let s = MetricSeries::new(times, values, 1.7).unwrap();
        let mut eps: Vec<f64> = (0..10).map(|_| rng.random_range(0.01..2.0)).collect();
        eps.sort_by(f64::total_cmp);
        let v: Vec<f64> = eps.iter().map(|e| vpt(&s, *e)).collect();
        if v.windows(2).all(|w| w[0] <= w[1]) {
            monotone += 1;
        }
    }
    ok &= monotone == 100;
    verdict(
        8,
        "metrics oracle suite",
        ok,
        &format!("hand examples exact; VPT monotone in epsilon on {monotone}/100 random series"),
        start.elapsed(),
        Duration::from_secs(5),
    );
}

#[test]
fn criterion_09_pca_eckart_young() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for trial in 0..3 {
        // decaying spectrum so the tails differ clearly between ranks
        let raw = random_mat(100, 400, &mut rng);
        let x = Mat::from_fn(100, 400, |i, j| raw[(i, j)] * (1.0 + trial as f64) / (1.0 + i as f64).sqrt());
        let svd = x.thin_svd().unwrap();
        let s: Vec<f64> = (0..100).map(|i| svd.S().column_vector()[i]).collect();
        let total: f64 = s.iter().map(|v| v * v).sum();
        let snaps = SnapshotMatrix::new(x.clone(), 0.0, 1.0).unwrap();
        for r in [1usize, 5, 20] {
            let basis = fit_pca(&snaps, RankTarget::Fixed(r), false).unwrap();
            let e = projection_error(&snaps, &basis).unwrap();
            let tail: f64 = s[r..].iter().map(|v| v * v).sum::<f64>() / total;
            worst = worst.max((e * e - tail).abs());
        }
    }
    verdict(
        9,
        "PCA Eckart-Young",
        worst < 1e-10,
        &format!("max |err^2 - tail energy| = {worst:.2e} < 1e-10 for r in 1, 5, 20"),
        start.elapsed(),
        Duration::from_secs(5),
    );
}

#[test]
fn criterion_10_restart_consistency() {
    let ks = ks_desk();
    let start = Instant::now();
    let SystemConfig::Ks(kcfg) = &ks.cfg.system else { unreachable!() };
    let snaps = SnapshotContainer::read(&ks.dir.path().join("snapshots_000.opnf"))
        .unwrap()
        .to_snapshots()
        .unwrap();
    let test = split_ranges(snaps.ncols(), &ks.cfg.splits).unwrap().test;
    let steps = (20.0 / kcfg.dt) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let c = rng.random_range(test.start..test.end - steps);
        let (cont, fail) = ks_continuation(kcfg, snaps.column(c), steps).unwrap();
        assert!(fail.is_none());
        let stored = snaps.data().subcols(c, steps + 1).to_owned();
        worst = worst.max(relative_l2(&stored, cont.data()).unwrap());
    }
    let report = cmd_restart_check(&ks.cfg, ks.dir.path()).unwrap();
    let emitted = ks.dir.path().join("restart.json").exists() && ks.dir.path().join("restart_gridpoints.csv").exists();
    verdict(
        10,
        "restart consistency",
        worst < 1e-6 && report.restart_failure.is_none() && emitted,
        &format!(
            "truth restarts over 20 s: worst rel. L2 {worst:.2e} < 1e-6; ROM-state restart of forecast {} {} (ROM vs restart rel. L2 {:.3})",
            report.forecast,
            if report.restart_failure.is_none() { "completed" } else { "blew up" },
            report.opinf_vs_restart_relative_l2
        ),
        start.elapsed(),
        Duration::from_secs(120),
    );
}

/// A short run on the small L = 22 domain, so every stage finishes in seconds.
fn small_ks() -> ExperimentConfig {
    let mut cfg = config("ks_desk.json");
    if let SystemConfig::Ks(k) = &mut cfg.system {
        k.domain_length = 22.0;
        k.n_grid = 64;
        k.t_final = 1200.0;
    }
    cfg.transient_discard = 100.0;
    cfg.lyapunov_exponent = 0.043;
    cfg.reduction = ReductionConfig::Pca {
        rank: None,
        energy: Some(0.999),
        centered: true,
    };
    cfg.solver = SolverConfig::Regularized {
        grid: GridSpec {
            log10_lambda2: vec![-3.0, 0.0],
            log10_lambda3: vec![-3.0, 0.0],
            lambda4: 0.0,
        },
        validation_horizon: None,
    };
    cfg.n_initial_conditions = 3;
    cfg.forecast_horizon = 20.0;
    cfg.restart.t_pick_lyapunov = 0.5;
    cfg.restart.duration = 5.0;
    cfg
}

fn small_lorenz96() -> ExperimentConfig {
    let mut cfg = config("lorenz96_f8_desk.json");
    if let SystemConfig::Lorenz96(s) = &mut cfg.system {
        s.t_final = 1100.0;
    }
    cfg.n_initial_conditions = 2;
    cfg.forecast_horizon = 5.0;
    cfg
}

fn full_run(cfg: &ExperimentConfig, dir: &Path, ks: bool) {
    cmd_generate(cfg, dir).unwrap();
    cmd_reduce(cfg, dir).unwrap();
    cmd_train(cfg, dir).unwrap();
    cmd_forecast(cfg, dir).unwrap();
    cmd_evaluate(cfg, dir).unwrap();
    if ks {
        cmd_restart_check(cfg, dir).unwrap();
    }
    cmd_plot(cfg, dir).unwrap();
}

fn listing(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

#[test]
fn criterion_11_determinism() {
    let start = Instant::now();
    let mut compared = 0;
    let mut mismatched = Vec::new();
    for (cfg, ks) in [(small_ks(), true), (small_lorenz96(), false)] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        full_run(&cfg, a.path(), ks);
        full_run(&cfg, b.path(), ks);
        let (la, lb) = (listing(a.path()), listing(b.path()));
        let names = |l: &[PathBuf]| l.iter().map(|p| p.file_name().unwrap().to_owned()).collect::<Vec<_>>();
        assert_eq!(names(&la), names(&lb));
        for (pa, pb) in la.iter().zip(&lb) {
            compared += 1;
            if std::fs::read(pa).unwrap() != std::fs::read(pb).unwrap() {
                mismatched.push(pa.file_name().unwrap().to_string_lossy().into_owned());
            }
        }
        assert!(la.iter().any(|p| p.ends_with("operators_000.opnf")));
        assert!(la.iter().any(|p| p.ends_with("report.json")));
    }
    verdict(
        11,
        "determinism",
        mismatched.is_empty(),
        &format!("{compared} files from two KS and two Lorenz 96 runs compared byte for byte, mismatches: {mismatched:?}"),
        start.elapsed(),
        Duration::from_secs(600),
    );
}
