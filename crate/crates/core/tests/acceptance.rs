//! Acceptance checks, one test per criterion. Each prints a single
//! `criterion N: PASS|FAIL ...` line straight to stderr so the verdicts show
//! up even when the harness captures output.
//!
//! Criteria 7 to 11 read the `desk_grid` sweep cached under
//! `target/acceptance-runs/desk_grid`. Missing or unfinished runs are
//! trained (or resumed) on first use when MNIST is available, which takes
//! hours on one core. Data comes from `$DEEPGROK_DATA_DIR`, else
//! `<workspace>/data/mnist`.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use deepgrok::dataset::{synthetic_digits, Mnist, DATA_DIR_ENV};
use deepgrok::detect::{
    classify_run, detect_rank_double_descent, fixtures, ClassifyParams, PhaseReport, Regime,
};
use deepgrok::instrument::{tunnel_length, weight_norm};
use deepgrok::linalg::{numerical_rank, Matrix, DEFAULT_RANK_TOL};
use deepgrok::model::{init_mlp, loss_and_gradients, mse, predict, MlpParams, Parameters};
use deepgrok::optim::{AdamState, OptimHyper};
use deepgrok::report::{layer_ranks, phase_report, weight_norms};
use deepgrok::runner::{
    preset_configs, run_experiment, run_sweep, MetricsFile, RunOptions, SweepOptions, TrainConfig,
    DESK_SEEDS, METRICS_FILE,
};

/// Box-Muller normal draw.
fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u: f64 = rng.gen_range(f64::EPSILON..1.0);
    let v: f64 = rng.gen();
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

fn verdict(criterion: u32, pass: bool, detail: &str) {
    let line = format!(
        "criterion {criterion}: {} {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn within(criterion: u32, elapsed: Duration, limit: Duration) -> bool {
    let ok = elapsed < limit;
    if !ok {
        verdict(
            criterion,
            false,
            &format!("runtime {elapsed:?} over {limit:?}"),
        );
    }
    ok
}

// ---------------------------------------------------------------- 1

/// Largest relative gap between backprop and central differences over
/// every parameter entry.
fn max_gradient_error(params: &MlpParams, x: &Matrix, y: &Matrix, h: f64) -> f64 {
    let (_, grads) = loss_and_gradients(params, x, y).unwrap();
    let loss_at = |p: &MlpParams| mse(&predict(p, x).unwrap(), y).unwrap();
    let mut worst: f64 = 0.0;
    let n_tensors = params.tensors().len();
    for t in 0..n_tensors {
        for i in 0..params.tensors()[t].len() {
            let mut plus = params.clone();
            plus.tensors_mut()[t][i] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[t][i] -= h;
            let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            let analytic = grads.tensors()[t][i];
            let scale = analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic - numeric).abs() / scale);
        }
    }
    worst
}

#[test]
fn criterion_01_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let depth = rng.gen_range(3..=5);
        let params = init_mlp(depth, 8, 6, 4, 1000 + k).unwrap();
        let x = Matrix::from_vec(4, 6, (0..24).map(|_| gaussian(&mut rng)).collect()).unwrap();
        let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..4)).collect();
        let mut y = Matrix::zeros(4, 4);
        for (r, &c) in labels.iter().enumerate() {
            y[(r, c)] = 1.0;
        }
        worst = worst.max(max_gradient_error(&params, &x, &y, 1e-5));
    }
    let elapsed = start.elapsed();
    let pass = worst < 1e-4 && within(1, elapsed, Duration::from_secs(10));
    verdict(
        1,
        pass,
        &format!("max relative error {worst:.2e} (< 1e-4), {elapsed:.2?}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 2

fn random_orthonormal(
    rows: usize,
    cols: usize,
    centered: bool,
    rng: &mut ChaCha8Rng,
) -> DMatrix<f64> {
    let mut g = DMatrix::from_fn(rows, cols, |_, _| gaussian(rng));
    if centered {
        for mut c in g.column_iter_mut() {
            let mean = c.mean();
            c.add_scalar_mut(-mean);
        }
    }
    g.qr().q()
}

fn to_matrix(m: &DMatrix<f64>) -> Matrix {
    Matrix::from_vec(m.nrows(), m.ncols(), m.transpose().as_slice().to_vec()).unwrap()
}

/// n×d activations whose sample covariance is exactly Q·diag(λ)·Qᵀ.
fn planted_activations(n: usize, d: usize, spectrum: &[f64], rng: &mut ChaCha8Rng) -> Matrix {
    let u = random_orthonormal(n, d, true, rng);
    let q = random_orthonormal(d, d, false, rng);
    let root = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        d,
        spectrum.iter().map(|l| l.sqrt()),
    ));
    to_matrix(&(u * root * q.transpose() * ((n - 1) as f64).sqrt()))
}

/// Rank of the centred matrix by nalgebra's SVD with a generous tolerance.
fn svd_rank(x: &Matrix) -> usize {
    let mut m = DMatrix::from_row_slice(x.rows(), x.cols(), x.as_slice());
    for mut c in m.column_iter_mut() {
        let mean = c.mean();
        c.add_scalar_mut(-mean);
    }
    let sv = m.singular_values();
    let tol = sv.max() * 1e-8;
    sv.iter().filter(|&&s| s > tol).count()
}

#[test]
fn criterion_02_rank_matches_planted_spectra() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut failures = Vec::new();
    for case in 0..50 {
        let n = rng.gen_range(30..120);
        let d = rng.gen_range(5..40);
        let k = rng.gen_range(0..=d.min(n - 1));
        let (x, kind) = if case % 2 == 0 {
            // k eigenvalues log-uniform in [1e-3, 1], the rest exactly zero
            let mut spectrum = vec![0.0; d];
            for l in spectrum.iter_mut().take(k) {
                *l = 10f64.powf(rng.gen_range(-3.0..0.0));
            }
            (planted_activations(n, d, &spectrum, &mut rng), "planted")
        } else {
            let a = DMatrix::from_fn(n, k, |_, _| gaussian(&mut rng));
            let b = DMatrix::from_fn(k, d, |_, _| gaussian(&mut rng));
            (to_matrix(&(a * b)), "low-rank")
        };
        let got = numerical_rank(&x, DEFAULT_RANK_TOL).unwrap();
        if kind == "low-rank" && svd_rank(&x) != k {
            failures.push(format!(
                "case {case}: svd oracle disagrees with planted {k}"
            ));
        }
        if got != k {
            failures.push(format!(
                "case {case} ({kind}, {n}x{d}): rank {got}, planted {k}"
            ));
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && within(2, elapsed, Duration::from_secs(10));
    verdict(
        2,
        pass,
        &format!(
            "{} of 50 mismatched, {elapsed:.2?} {failures:?}",
            failures.len()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 3

/// Scalar Adam with decoupled decay, written out term by term.
fn reference_adam(theta0: f64, grads: &[f64], lr: f64, wd: f64) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
    let (mut m, mut v, mut theta) = (0.0, 0.0, theta0);
    let mut out = Vec::new();
    let (mut p1, mut p2) = (1.0, 1.0);
    for &g in grads {
        p1 *= b1;
        p2 *= b2;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - p1);
        let v_hat = v / (1.0 - p2);
        theta -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * theta);
        out.push(theta);
    }
    out
}

#[test]
fn criterion_03_adam_matches_scalar_reference() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let len = rng.gen_range(1..60);
        let scale = 10f64.powf(rng.gen_range(-4.0..2.0));
        let grads: Vec<f64> = (0..len).map(|_| scale * gaussian(&mut rng)).collect();
        let lr = 10f64.powf(rng.gen_range(-4.0..-1.0));
        let wd = if rng.gen_bool(0.5) {
            0.0
        } else {
            rng.gen_range(0.0..0.1)
        };
        let theta0 = gaussian(&mut rng);
        let expected = reference_adam(theta0, &grads, lr, wd);

        let mut theta = vec![theta0];
        let mut state = AdamState::new(&theta);
        let hyper = OptimHyper::with_weight_decay(lr, wd);
        for (g, want) in grads.iter().zip(&expected) {
            state.step(&mut theta, &vec![*g], &hyper).unwrap();
            worst = worst.max((theta[0] - want).abs() / want.abs().max(1.0));
        }
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-12 && within(3, elapsed, Duration::from_secs(5));
    verdict(
        3,
        pass,
        &format!("max deviation {worst:.2e} (<= 1e-12), {elapsed:.2?}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 4

#[test]
fn criterion_04_rescale_multiplies_norm_by_alpha() {
    let start = Instant::now();
    let base = init_mlp(6, 64, 784, 10, 4).unwrap();
    let w0 = weight_norm(&base);
    let mut worst: f64 = 0.0;
    for alpha in [0.5, 1.0, 2.0, 8.0] {
        let ratio = weight_norm(&base.clone().rescaled(alpha).unwrap()) / w0;
        worst = worst.max((ratio - alpha).abs() / alpha);
    }
    let elapsed = start.elapsed();
    let pass = worst < 1e-9 && within(4, elapsed, Duration::from_secs(1));
    verdict(
        4,
        pass,
        &format!("max relative error {worst:.2e} (< 1e-9), {elapsed:.2?}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 5

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace_root().join("data/mnist"))
}

fn mnist() -> Option<&'static Mnist> {
    static DATA: OnceLock<Option<Mnist>> = OnceLock::new();
    DATA.get_or_init(|| Mnist::load_dir(data_dir()).ok())
        .as_ref()
}

fn records_without_time(path: &Path) -> Vec<deepgrok::runner::MetricsRecord> {
    MetricsFile::read(path)
        .unwrap()
        .records
        .iter()
        .map(|r| r.without_wall_time())
        .collect()
}

#[test]
fn criterion_05_runs_are_deterministic_and_resumable() {
    let start = Instant::now();
    let synthetic;
    let (data, source) = match mnist() {
        Some(m) => (m, "mnist"),
        None => {
            synthetic = synthetic_digits(2000, 1000, 5);
            (&synthetic, "synthetic")
        }
    };
    let config = TrainConfig {
        depth: 4,
        width: 32,
        n_train: 256,
        total_steps: 500,
        checkpoint_every: 100,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, options: RunOptions| {
        run_experiment(&config, data, &dir.path().join(name), &options).unwrap()
    };
    let a = run("a", RunOptions::default());
    let b = run("b", RunOptions::default());
    let half = run(
        "c",
        RunOptions {
            resume: false,
            stop_after: Some(250),
        },
    );
    let resumed = run(
        "c",
        RunOptions {
            resume: true,
            stop_after: None,
        },
    );

    let ra = records_without_time(&a.metrics_path);
    let identical = ra == records_without_time(&b.metrics_path);
    let resumes = half.steps_done == 250
        && resumed.resumed_from == Some(250)
        && ra == records_without_time(&resumed.metrics_path);
    let elapsed = start.elapsed();
    let pass = identical && resumes && a.completed && within(5, elapsed, Duration::from_secs(120));
    verdict(
        5,
        pass,
        &format!(
            "{source} data, {} records, repeat identical {identical}, resume identical {resumes}, {elapsed:.2?}",
            ra.len()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_06_detectors_label_fixtures() {
    let start = Instant::now();
    let p = ClassifyParams::default();
    let cases = [
        ("grokking", fixtures::grokking(), Regime::Grokking),
        ("generalizes", fixtures::generalizes(), Regime::Generalizes),
        ("fails", fixtures::fails(), Regime::FailsToGeneralize),
        ("two_stage", fixtures::two_stage(), Regime::MultiStage),
    ];
    let mut labels = Vec::new();
    let mut all = true;
    for (name, (train, test), want) in cases {
        let got = classify_run(&train, &test, &[], &p).unwrap().regime;
        all &= got == want;
        labels.push(format!("{name}->{got}"));
    }
    let dd = detect_rank_double_descent(&fixtures::rank_v_then_fall())
        .unwrap()
        .double_descent;
    let elapsed = start.elapsed();
    let pass = all && dd && within(6, elapsed, Duration::from_secs(1));
    verdict(
        6,
        pass,
        &format!("{}, double descent {dd}, {elapsed:.2?}", labels.join(" ")),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 7-11

/// Loads (training first if needed) every run of the desk grid.
fn desk_runs() -> Result<&'static Vec<(String, MetricsFile)>, String> {
    static RUNS: OnceLock<Result<Vec<(String, MetricsFile)>, String>> = OnceLock::new();
    static LOCK: Mutex<()> = Mutex::new(());
    let _guard = LOCK.lock().unwrap_or_else(|e| e.into_inner());
    RUNS.get_or_init(|| {
        let dir = workspace_root().join("target/acceptance-runs/desk_grid");
        let configs =
            preset_configs("desk_grid", &TrainConfig::default()).map_err(|e| e.to_string())?;
        let complete = |name: &str| {
            MetricsFile::read(&dir.join(name).join(METRICS_FILE)).is_ok_and(|m| m.is_complete())
        };
        if !configs.iter().all(|(name, _)| complete(name)) {
            let data = mnist().ok_or(format!(
                "desk runs missing and no MNIST under {}",
                data_dir().display()
            ))?;
            run_sweep("desk_grid", data, &dir, &SweepOptions::default())
                .map_err(|e| e.to_string())?;
        }
        configs
            .iter()
            .map(|(name, config)| {
                let file = MetricsFile::read(&dir.join(name).join(METRICS_FILE))
                    .map_err(|e| format!("{name}: {e}"))?;
                if &file.header.config != config || !file.is_complete() {
                    return Err(format!("{name}: stale or incomplete run"));
                }
                Ok((name.clone(), file))
            })
            .collect()
    })
    .as_ref()
    .map_err(Clone::clone)
}

fn run<'a>(runs: &'a [(String, MetricsFile)], name: &str) -> &'a MetricsFile {
    &runs
        .iter()
        .find(|(n, _)| n == name)
        .expect("desk run exists")
        .1
}

fn final_test(file: &MetricsFile) -> f64 {
    file.last().map_or(0.0, |r| r.test_acc)
}

fn report(file: &MetricsFile) -> PhaseReport {
    phase_report(file).unwrap()
}

/// Reports a criterion that could not be evaluated and fails its test.
fn unavailable(criterion: u32, why: &str) -> ! {
    verdict(criterion, false, &format!("not evaluated: {why}"));
    panic!("criterion {criterion} not evaluated: {why}");
}

fn describe(r: &PhaseReport, acc: f64) -> String {
    format!(
        "{}(ratio {}, acc {acc:.3})",
        r.regime,
        r.grok_gap_ratio.map_or("-".into(), |x| format!("{x:.1}"))
    )
}

#[test]
fn criterion_07_large_init_groks() {
    let runs = desk_runs().unwrap_or_else(|e| unavailable(7, &e));
    let mut hits = 0;
    let mut notes = Vec::new();
    for seed in DESK_SEEDS {
        let f = run(runs, &format!("d6-a8-n1000-s{seed}"));
        let r = report(f);
        let ok = r.regime == Regime::Grokking
            && r.grok_gap_ratio.is_some_and(|x| x >= 3.0)
            && final_test(f) >= 0.8;
        hits += ok as usize;
        notes.push(format!("s{seed} {}", describe(&r, final_test(f))));
    }
    let pass = hits >= 2;
    verdict(
        7,
        pass,
        &format!("{hits}/3 seeds grok with acc >= 0.8: {}", notes.join(", ")),
    );
    assert!(pass);
}

#[test]
fn criterion_08_standard_init_generalizes() {
    let runs = desk_runs().unwrap_or_else(|e| unavailable(8, &e));
    let mut hits = 0;
    let mut notes = Vec::new();
    for seed in DESK_SEEDS {
        let f = run(runs, &format!("d6-a1-n1000-s{seed}"));
        let r = report(f);
        let ok = r.regime == Regime::Generalizes
            && r.grok_gap_ratio.is_none_or(|x| x < 2.0)
            && final_test(f) >= 0.9;
        hits += ok as usize;
        notes.push(format!("s{seed} {}", describe(&r, final_test(f))));
    }
    let pass = hits >= 2;
    verdict(
        8,
        pass,
        &format!(
            "{hits}/3 seeds generalize with acc >= 0.9: {}",
            notes.join(", ")
        ),
    );
    assert!(pass);
}

/// Mean rank over the deeper half of the hidden layers at `step`.
fn deep_mean_rank(file: &MetricsFile, step: u64) -> f64 {
    let rec = file
        .records
        .iter()
        .find(|r| r.step == step)
        .expect("surge bounds are logged steps");
    let ranks = &rec.per_layer_rank;
    let deep = &ranks[ranks.len() / 2..];
    deep.iter().sum::<usize>() as f64 / deep.len() as f64
}

#[test]
fn criterion_09_rank_falls_across_first_surge() {
    let runs = desk_runs().unwrap_or_else(|e| unavailable(9, &e));
    let mut checked = 0;
    let mut failed = 0;
    let mut notes = Vec::new();
    for seed in DESK_SEEDS {
        let f = run(runs, &format!("d6-a8-n1000-s{seed}"));
        let r = report(f);
        if r.regime != Regime::Grokking {
            notes.push(format!("s{seed} not grokking"));
            continue;
        }
        let Some(surge) = r.surges.first() else {
            notes.push(format!("s{seed} no surge"));
            failed += 1;
            continue;
        };
        let (a, b) = (
            deep_mean_rank(f, surge.start_step),
            deep_mean_rank(f, surge.end_step),
        );
        checked += 1;
        if b >= a {
            failed += 1;
        }
        notes.push(format!(
            "s{seed} steps {}..{} rank {a:.1} -> {b:.1}",
            surge.start_step, surge.end_step
        ));
    }
    let pass = checked > 0 && failed == 0;
    verdict(
        9,
        pass,
        &format!("{checked} grokking seeds checked: {}", notes.join(", ")),
    );
    assert!(pass);
}

#[test]
fn criterion_10_weight_norm_overlaps_while_rank_differs() {
    let runs = desk_runs().unwrap_or_else(|e| unavailable(10, &e));
    let small = run(runs, "d6-a8-n1000-s0");
    let large = run(runs, "d6-a8-n4000-s0");
    let (na, nb) = (weight_norms(small).unwrap(), weight_norms(large).unwrap());
    assert_eq!(na.steps(), nb.steps(), "runs share one schedule");
    let (a0, b0) = (na.values()[0], nb.values()[0]);
    let norm_gap = na
        .values()
        .iter()
        .zip(nb.values())
        .map(|(a, b)| (a / a0 - b / b0).abs())
        .fold(0.0, f64::max);

    // the last hidden layer feeds the output layer
    let ra = layer_ranks(small).unwrap().pop().unwrap();
    let rb = layer_ranks(large).unwrap().pop().unwrap();
    let both = ra.values().iter().chain(rb.values());
    let (lo, hi) = both.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
        (l.min(v), h.max(v))
    });
    let rank_gap = ra
        .values()
        .iter()
        .zip(rb.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let range = hi - lo;
    let pass = norm_gap < 0.1 && range > 0.0 && rank_gap > 0.25 * range;
    verdict(
        10,
        pass,
        &format!(
            "normalized norm L-inf {norm_gap:.4} (< 0.1), rank gap {rank_gap:.0} (> 0.25 x range {range:.0} = {:.1})", 0.25 * range
        ),
    );
    assert!(pass);
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn criterion_11_deeper_nets_generalize_later() {
    let runs = desk_runs().unwrap_or_else(|e| unavailable(11, &e));
    let stats = |depth: usize| {
        let mut sat = Vec::new();
        let mut tunnel = Vec::new();
        for seed in DESK_SEEDS {
            let f = run(runs, &format!("d{depth}-a8-n1000-s{seed}"));
            // never saturating counts as later than any logged step
            sat.push(report(f).t_test_sat.map_or(f64::INFINITY, |s| s as f64));
            let last = f.last().unwrap();
            tunnel.push(tunnel_length(&last.per_layer_rank, f.config().tunnel_threshold) as f64);
        }
        (median(sat), median(tunnel))
    };
    let (sat4, tun4) = stats(4);
    let (sat8, tun8) = stats(8);
    let pass = sat8 > sat4 && tun8 >= tun4;
    verdict(
        11,
        pass,
        &format!("median t_test_sat d8 {sat8} vs d4 {sat4}; median tunnel d8 {tun8} vs d4 {tun4}"),
    );
    assert!(pass);
}

#[test]
fn criterion_12_full_scale_is_documented_only() {
    // Width 400, depth 4/8/12, n 5000/7000, 10⁵ steps: run with
    // `deepgrok sweep depth_grid`. Not gated here.
    let grid = preset_configs("depth_grid", &TrainConfig::default()).unwrap();
    let _ = std::io::stderr().write_all(
        format!(
            "criterion 12: NOT GATED ({} full-scale configs in depth_grid)\n",
            grid.len()
        )
        .as_bytes(),
    );
    assert_eq!(grid.len(), 6);
}
