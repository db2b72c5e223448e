//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when a hard criterion fails.
//!
//! `ACCEPTANCE_ONLY=1,4` runs a subset. Criterion 7 writes its benchmark
//! tables under `target/tmp/acceptance/overfitting_gap`; with
//! `ACCEPTANCE_RESUME=1` it reuses finished cells from a previous run.

use std::path::PathBuf;
use std::time::Instant;

use ndarray::Array2;

use ensloss::datasets::{make_synthetic, SplitDataset, SyntheticSpec};
use ensloss::derivgen::{generate_rc_derivatives, fixed_loss_derivatives, GenConfig, MarginBatch};
use ensloss::evaluation::bench::{run_benchmark, BenchConfig, BenchMetric};
use ensloss::evaluation::stats::{mean, paired_t_test_one_tailed, Verdict};
use ensloss::losses::{
    builtin_names, check_bounded_below, check_calibration, excess_risk_bound, psi_transform, reconstruct_loss,
    AlphaSearch, FiniteLossMixture, LossSpec,
};
use ensloss::manifest::{DataSource, KvMap, Precision, RunSpec};
use ensloss::models::{Activation, Mlp};
use ensloss::trainer::{train, train_with_source, FixedSource, LrSchedule, ModelSpec, RunRecord, TrainConfig, TrainMode};
use ensloss::{builtin_loss, certify_rc, BoxCoxParam, Rng};

struct Outcome {
    pass: bool,
    /// Soft criteria are reported but do not fail the suite.
    soft: bool,
    detail: String,
}

fn hard(pass: bool, detail: String) -> Outcome {
    Outcome { pass, soft: false, detail }
}

fn lambdas() -> [BoxCoxParam; 3] {
    [0.0, 0.5, 1.0].map(|l| BoxCoxParam::new(l).unwrap())
}

/// Batch of `b` margins drawn from N(0, 3^2).
fn random_margins(rng: &mut Rng, b: usize) -> Vec<f64> {
    (0..b).map(|_| 3.0 * rng.standard_normal()).collect()
}

/// Direct check of the three RC conditions (p = 1) over all sorted neighbours.
fn rc_oracle(z: &[f64], g: &[f64]) -> Result<(), String> {
    let mut idx: Vec<usize> = (0..z.len()).collect();
    idx.sort_by(|&a, &b| z[a].total_cmp(&z[b]));
    for &i in &idx {
        if z[i] <= 0.0 && !(g[i] < 0.0) {
            return Err(format!("calibration: z={} g={}", z[i], g[i]));
        }
    }
    for w in idx.windows(2) {
        let (i, j) = (w[0], w[1]);
        if z[i] == z[j] && g[i] != g[j] {
            return Err(format!("tie with different derivatives at z={}", z[i]));
        }
        if z[i] < z[j] && g[i] > g[j] {
            return Err(format!("convexity: g({})={} > g({})={}", z[i], g[i], z[j], g[j]));
        }
        if z[i] >= 1.0 && z[i] < z[j] {
            let (a, b) = (z[i] * g[i], z[j] * g[j]);
            // the generator computes g = draw / z, so z * g carries one rounding
            if a > b + 4.0 * f64::EPSILON * a.abs().max(b.abs()) {
                return Err(format!("tail: z*g {a} > {b}"));
            }
        }
    }
    Ok(())
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::new(1);
    let mut lib_failures = 0;
    let mut oracle_failures = 0;
    let mut first = None;
    let n = 100_000;
    for k in 0..n {
        let b = 2 + rng.index(511);
        let z = random_margins(&mut rng, b);
        let cfg = GenConfig {
            lambda: lambdas()[k % 3],
            ..GenConfig::default()
        };
        let batch = MarginBatch::from_margins(z.clone()).unwrap();
        let d = match generate_rc_derivatives(&batch, &cfg, &mut rng) {
            Ok(d) => d,
            Err(e) => {
                lib_failures += 1;
                first.get_or_insert(e.to_string());
                continue;
            }
        };
        if !d.certified || certify_rc(&z, &d.derivs, 1.0).unwrap().is_some() {
            lib_failures += 1;
        }
        if let Err(e) = rc_oracle(&z, &d.derivs) {
            oracle_failures += 1;
            first.get_or_insert(e);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    hard(
        lib_failures == 0 && oracle_failures == 0 && secs < 60.0,
        format!(
            "{n} batches, B in [2,512], lambda in {{0,0.5,1}}: {lib_failures} certify_rc failures, \
             {oracle_failures} oracle failures, {secs:.1}s{}",
            first.map(|e| format!(" (first: {e})")).unwrap_or_default()
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = Rng::new(2);
    let n = 10_000;
    let mut failures = Vec::new();
    for k in 0..n {
        let b = 2 + rng.index(511);
        let z = random_margins(&mut rng, b);
        let cfg = GenConfig {
            lambda: lambdas()[k % 3],
            ..GenConfig::default()
        };
        let d = generate_rc_derivatives(&MarginBatch::from_margins(z.clone()).unwrap(), &cfg, &mut rng).unwrap();
        let pw = match reconstruct_loss(&z, &d.derivs) {
            Ok(pw) => pw,
            Err(e) => {
                failures.push(format!("batch {k}: reconstruct failed: {e}"));
                continue;
            }
        };
        let convex = pw.slopes().windows(2).all(|w| w[0] <= w[1]);
        // the reconstructed loss must reproduce the drawn derivative at every margin
        let matches = z
            .iter()
            .zip(&d.derivs)
            .all(|(zi, gi)| (pw.derivative(*zi) - gi).abs() <= 1e-12 * gi.abs().max(1.0));
        let spec = LossSpec::from_piecewise(pw);
        let cal = check_calibration(&spec);
        let calibrated = cal.map(|c| c.calibrated).unwrap_or(false);
        let bounded = check_bounded_below(&spec, 1e12).map(|c| c.bounded).unwrap_or(false);
        if !(convex && matches && calibrated && bounded) {
            failures.push(format!(
                "batch {k}: convex={convex} derivative_match={matches} calibrated={calibrated} bounded={bounded}"
            ));
        }
    }
    hard(
        failures.is_empty(),
        format!(
            "{n} reconstructions: {} failures{}",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

/// Closed-form psi of the {exponential pi1, logistic(2z) pi2} mixture.
fn psi_closed_form(pi1: f64, theta: f64) -> f64 {
    let pi2 = 1.0 - pi1;
    let xlx = |x: f64| if x == 0.0 { 0.0 } else { x * x.ln() };
    pi1 * (1.0 - (1.0 - theta * theta).sqrt()) + pi2 / 2.0 * (xlx(1.0 - theta) + xlx(1.0 + theta))
}

fn criterion_3() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut envelope_ok = true;
    let mut envelope_detail = Vec::new();
    for pi1 in [0.3, 0.5, 0.7] {
        let mix = FiniteLossMixture::new(vec![
            (builtin_loss("exponential").unwrap(), pi1),
            (builtin_loss("logistic_2z").unwrap(), 1.0 - pi1),
        ])
        .unwrap();
        for i in 1..=9 {
            let theta = i as f64 / 10.0;
            let got = psi_transform(&mix, theta, AlphaSearch::default()).unwrap();
            worst = worst.max((got - psi_closed_form(pi1, theta)).abs());
        }
        let scale = 2.0 / (2.0 * pi1 + (1.0 - pi1)).sqrt();
        for e in [1e-3, 1e-2, 1e-1] {
            let bound = excess_risk_bound(&mix, e).unwrap();
            let env = scale * e.sqrt();
            if bound > env {
                envelope_ok = false;
                envelope_detail.push(format!("pi1={pi1} e={e}: {bound} > {env}"));
            }
        }
    }
    hard(
        worst <= 1e-6 && envelope_ok,
        format!(
            "max |psi - closed form| = {worst:.2e} over 27 points; envelope 2/sqrt(2pi1+pi2)*sqrt(e) {}",
            if envelope_ok { "holds at e in {1e-3,1e-2,1e-1}".to_string() } else { envelope_detail.join("; ") }
        ),
    )
}

/// Independent forward pass: score and every hidden pre-activation.
fn oracle_forward(m: &Mlp<f64>, x: &[f64]) -> (f64, Vec<f64>) {
    let mut a = x.to_vec();
    let mut pre_all = Vec::new();
    let n = m.weights().len();
    for (l, (w, b)) in m.weights().iter().zip(m.biases()).enumerate() {
        let pre: Vec<f64> = (0..w.nrows())
            .map(|r| (0..w.ncols()).map(|c| w[[r, c]] * a[c]).sum::<f64>() + b[r])
            .collect();
        if l + 1 == n {
            return (pre[0], pre_all);
        }
        pre_all.extend_from_slice(&pre);
        a = match m.activation() {
            Activation::Relu => pre.iter().map(|v| v.max(0.0)).collect(),
            Activation::Tanh => pre.iter().map(|v| v.tanh()).collect(),
        };
    }
    unreachable!()
}

struct Instance {
    model: Mlp<f64>,
    x: Array2<f64>,
    y: Vec<f64>,
}

/// Random network and batch whose margins keep away from `avoid` and whose
/// ReLU pre-activations keep away from 0, so central differences with
/// h = 1e-5 never straddle a kink.
fn instance(rng: &mut Rng, avoid: &[f64]) -> Instance {
    loop {
        let d = 2 + rng.index(4);
        let depth = 1 + rng.index(3);
        let width = 4 + rng.index(9);
        let act = if rng.uniform() < 0.5 { Activation::Relu } else { Activation::Tanh };
        let model = Mlp::<f64>::new(Mlp::<f64>::dims(d, depth, width), act, 0.0, 0.0, rng).unwrap();
        let b = 2 + rng.index(12);
        let x = Array2::from_shape_fn((b, d), |_| rng.standard_normal());
        let y: Vec<f64> = (0..b).map(|_| if rng.uniform() < 0.5 { 1.0 } else { -1.0 }).collect();
        let mut ok = true;
        for (row, yi) in x.rows().into_iter().zip(&y) {
            let (s, pre) = oracle_forward(&model, row.as_slice().unwrap());
            if act == Activation::Relu && pre.iter().any(|p| p.abs() < 1e-3) {
                ok = false;
            }
            if avoid.iter().any(|k| (yi * s - k).abs() < 1e-3) {
                ok = false;
            }
        }
        if ok {
            return Instance { model, x, y };
        }
    }
}

/// Backprop gradient with derivatives `g`, and the central-difference
/// gradient of the mean of `loss` over the batch.
fn gradient_pair(inst: &Instance, g: &[f64], loss: &dyn Fn(f64) -> f64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = Rng::new(0);
    let pass = inst.model.forward(inst.x.view(), true, &mut rng).unwrap();
    let derivs = ensloss::derivgen::DerivativeBatch {
        derivs: g.to_vec(),
        lambda_used: None,
        certified: false,
    };
    let bp = inst.model.backward_with_derivs(&pass.cache, &inst.y, &derivs).unwrap().to_flat();
    let theta = inst.model.to_flat();
    let h = 1e-5;
    let mean_loss = |p: &[f64]| {
        let mut m = inst.model.clone();
        m.set_flat(p).unwrap();
        inst.x
            .rows()
            .into_iter()
            .zip(&inst.y)
            .map(|(row, yi)| loss(yi * oracle_forward(&m, row.as_slice().unwrap()).0))
            .sum::<f64>()
            / inst.y.len() as f64
    };
    let fd = (0..theta.len())
        .map(|i| {
            let mut p = theta.clone();
            p[i] += h;
            let up = mean_loss(&p);
            p[i] -= 2.0 * h;
            (up - mean_loss(&p)) / (2.0 * h)
        })
        .collect();
    (bp, fd)
}

/// `||a - b|| / max(||a||, ||b||)`.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn criterion_4() -> Outcome {
    let mut rng = Rng::new(4);
    let mut worst: (f64, String) = (0.0, String::new());
    let mut failures = 0;
    let mut total = 0;
    for name in builtin_names() {
        let loss = builtin_loss(name).unwrap();
        for _ in 0..50 {
            let inst = instance(&mut rng, loss.kinks());
            let margins: Vec<f64> = inst
                .x
                .rows()
                .into_iter()
                .zip(&inst.y)
                .map(|(r, y)| y * oracle_forward(&inst.model, r.as_slice().unwrap()).0)
                .collect();
            let g = fixed_loss_derivatives(&MarginBatch::from_margins(margins).unwrap(), &loss)
                .unwrap()
                .derivs;
            let (bp, fd) = gradient_pair(&inst, &g, &|z| loss.value(z));
            let e = rel_err(&bp, &fd);
            total += 1;
            if e >= 1e-4 {
                failures += 1;
            }
            if e > worst.0 {
                worst = (e, name.to_string());
            }
        }
    }
    // EnsLoss path: random RC derivatives, checked against the loss they
    // certify (the piecewise-linear reconstruction through the margins)
    for k in 0..50 {
        let inst = instance(&mut rng, &[]);
        let margins: Vec<f64> = inst
            .x
            .rows()
            .into_iter()
            .zip(&inst.y)
            .map(|(r, y)| y * oracle_forward(&inst.model, r.as_slice().unwrap()).0)
            .collect();
        let cfg = GenConfig {
            lambda: lambdas()[k % 3],
            ..GenConfig::default()
        };
        let g = generate_rc_derivatives(&MarginBatch::from_margins(margins.clone()).unwrap(), &cfg, &mut rng)
            .unwrap()
            .derivs;
        let pw = reconstruct_loss(&margins, &g).unwrap();
        if pw.knots().iter().any(|k| margins.iter().any(|z| (z - k).abs() < 1e-3)) {
            continue;
        }
        let (bp, fd) = gradient_pair(&inst, &g, &|z| pw.value(z));
        let e = rel_err(&bp, &fd);
        total += 1;
        if e >= 1e-4 {
            failures += 1;
        }
        if e > worst.0 {
            worst = (e, "ensloss".into());
        }
    }
    hard(
        failures == 0,
        format!(
            "{total} instances ({} losses x 50 + ensloss): {failures} above 1e-4; worst relative error {:.2e} ({})",
            builtin_names().len(),
            worst.0,
            worst.1
        ),
    )
}

fn blobs(n: usize, sep: f64, seed: u64) -> SplitDataset<f64> {
    make_synthetic(&SyntheticSpec::gaussian_blobs(n, 2, sep), seed).unwrap()
}

fn criterion_5() -> Outcome {
    // 300 training rows, so no batch of 16 is shorter than 2
    let data = blobs(400, 2.0, 5);
    let spec = ModelSpec::mlp(2, 16);
    let fixed = TrainConfig {
        mode: TrainMode::Fixed("hinge".into()),
        epochs: 20,
        batch_size: 16,
        lr: 0.1,
        dropout_rate: 0.1,
        seed: 5,
        ..TrainConfig::default()
    };
    let ens = TrainConfig {
        mode: TrainMode::EnsLoss,
        ..fixed.clone()
    };
    let (m1, r1) = train(&data, &spec, &fixed).unwrap();
    let mut injected = FixedSource::with_min_batch(builtin_loss("hinge").unwrap(), 2);
    let (m2, r2) = train_with_source(&data, &spec, &ens, &mut injected).unwrap();
    let bits = |m: &Mlp<f64>| m.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<u64>>();
    let same_params = bits(&m1) == bits(&m2);
    let same_record = r1.to_jsonl() == r2.to_jsonl() && r1.summary == r2.summary;
    hard(
        same_params && same_record,
        format!(
            "20 epochs, {} updates each: parameters bitwise equal = {same_params}, records byte-equal = {same_record}",
            r1.summary.updates
        ),
    )
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let bayes = SyntheticSpec::gaussian_blobs(2000, 2, 2.0).bayes_accuracy();
    let spec = ModelSpec::mlp(2, 64);
    let mut reached = 0;
    let mut final_ok = 0;
    let mut bests = Vec::new();
    for seed in 0..10 {
        let data = blobs(2000, 2.0, seed);
        let cfg = TrainConfig {
            mode: TrainMode::EnsLoss,
            epochs: 300,
            batch_size: 128,
            lr: 0.1,
            seed,
            ..TrainConfig::default()
        };
        let (_, rec) = train(&data, &spec, &cfg).unwrap();
        bests.push(format!("{:.3}", rec.summary.best_test_acc));
        if rec.summary.best_test_acc >= 0.82 {
            reached += 1;
        }
        if rec.summary.final_test_acc >= 0.82 {
            final_ok += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    hard(
        reached >= 8 && secs < 300.0,
        format!(
            "Bayes accuracy {bayes:.4}; test accuracy reached 0.82 within 300 epochs in {reached}/10 seeds \
             (final epoch: {final_ok}/10); best per seed [{}]; {secs:.0}s",
            bests.join(", ")
        ),
    )
}

fn out_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name)
}

/// The benchmark behind criterion 7.
pub fn overfitting_config() -> BenchConfig {
    let mut spec = SyntheticSpec::high_dim_sparse(1000, 2000, 20, 3.0);
    spec.test_fraction = 0.5;
    BenchConfig {
        datasets: vec![DataSource::Synthetic(spec)],
        methods: ["ensloss", "fixed:logistic", "fixed:hinge", "fixed:exponential"]
            .iter()
            .map(|m| m.parse().unwrap())
            .collect(),
        seeds: (0..10).collect(),
        model: ModelSpec::mlp(5, 256),
        base: TrainConfig {
            epochs: 100,
            batch_size: 32,
            lr: 0.003,
            ..TrainConfig::default()
        },
        precision: Precision::F32,
        metric: BenchMetric::FinalTestAcc,
        jobs: 1,
    }
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let cfg = overfitting_config();
    let dir = out_dir("overfitting_gap");
    if std::env::var_os("ACCEPTANCE_RESUME").is_none() {
        let _ = std::fs::remove_dir_all(&dir);
    }
    let report = run_benchmark(&cfg, Some(&dir)).unwrap();
    report.write_outputs(&dir).unwrap();
    let ds = "high_dim_sparse";
    let ens = report.cell(ds, "ensloss").and_then(|c| c.mean);
    let fixed: Vec<(String, f64)> = report
        .cells
        .iter()
        .filter(|c| c.method != "ensloss")
        .filter_map(|c| c.mean.map(|m| (c.method.clone(), m)))
        .collect();
    let (Some(ens), Some(worst), Some(best)) = (
        ens,
        fixed.iter().min_by(|a, b| a.1.total_cmp(&b.1)),
        fixed.iter().max_by(|a, b| a.1.total_cmp(&b.1)),
    ) else {
        return Outcome {
            pass: false,
            soft: true,
            detail: "missing results".into(),
        };
    };
    let vs_best = report.verdict(ds, "ensloss", &best.0);
    let pass = ens >= worst.1 && (ens >= best.1 || vs_best != Some(Verdict::Worse));
    let triples: Vec<String> = report
        .summary
        .iter()
        .filter(|s| s.method == "ensloss")
        .map(|s| format!("vs {} ({}, {}, {})", s.competitor, s.better, s.no_diff, s.worse))
        .collect();
    println!("{}", report.summary_text().trim_end());
    Outcome {
        pass,
        soft: true,
        detail: format!(
            "ensloss mean {ens:.4}; worst fixed {} {:.4}; best fixed {} {:.4}; ensloss {}; {:.0}s",
            worst.0,
            worst.1,
            best.0,
            best.1,
            triples.join(", "),
            start.elapsed().as_secs_f64()
        ),
    }
}

/// Non-finite parameters, or training accuracy below 0.6 after exceeding 0.9.
fn unstable(rec: &RunRecord) -> bool {
    if rec.diverged() {
        return true;
    }
    let mut peaked = false;
    for r in &rec.rows {
        if r.train_acc > 0.9 {
            peaked = true;
        } else if peaked && r.train_acc < 0.6 {
            return true;
        }
    }
    false
}

fn criterion_8() -> Outcome {
    let spec = ModelSpec::mlp(3, 64);
    let mut counts = [0usize; 2];
    let mut marks = [String::new(), String::new()];
    for seed in 0..10 {
        let data = blobs(1000, 4.0, seed);
        for (i, loss) in ["hinge_log_tail", "hinge_zero_tail"].iter().enumerate() {
            let cfg = TrainConfig {
                mode: TrainMode::Fixed(loss.to_string()),
                epochs: 200,
                batch_size: 32,
                lr: 0.2,
                lr_schedule: LrSchedule::Constant,
                seed,
                ..TrainConfig::default()
            };
            let (_, rec) = train(&data, &spec, &cfg).unwrap();
            let bad = unstable(&rec);
            counts[i] += usize::from(bad);
            marks[i].push(if rec.diverged() { 'D' } else if bad { 'C' } else { '.' });
        }
    }
    hard(
        counts[0] >= 3 && counts[1] == 0,
        format!(
            "unstable runs: hinge_log_tail {}/10 [{}], hinge_zero_tail {}/10 [{}] (D diverged, C collapsed)",
            counts[0], marks[0], counts[1], marks[1]
        ),
    )
}

/// Student t CDF for integer degrees of freedom by the classical finite
/// trigonometric series in `theta = atan(t / sqrt(df))`.
fn t_cdf_closed_form(t: f64, df: u32) -> f64 {
    let th = (t / (df as f64).sqrt()).atan();
    let (s, c) = th.sin_cos();
    let c2 = c * c;
    if df % 2 == 1 {
        let mut sum = 0.0;
        if df > 1 {
            let mut term = 1.0;
            sum = 1.0;
            let mut k = 2;
            while k < df - 1 {
                term *= k as f64 / (k + 1) as f64 * c2;
                sum += term;
                k += 2;
            }
            sum *= s * c;
        }
        0.5 + (th + sum) / std::f64::consts::PI
    } else {
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1;
        while k < df - 1 {
            term *= k as f64 / (k + 1) as f64 * c2;
            sum += term;
            k += 2;
        }
        0.5 + 0.5 * s * sum
    }
}

fn criterion_9() -> Outcome {
    let mut rng = Rng::new(9);
    let mut worst: f64 = 0.0;
    let mut verdict_mismatch = 0;
    for k in 0..100 {
        let n = if k % 2 == 0 { 5 } else { 10 };
        let shift = 0.03 * rng.standard_normal();
        let a: Vec<f64> = (0..n).map(|_| 0.8 + 0.05 * rng.standard_normal()).collect();
        let b: Vec<f64> = a.iter().map(|v| v - shift + 0.03 * rng.standard_normal()).collect();
        let r = paired_t_test_one_tailed(&a, &b).unwrap();
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let m = mean(&d);
        let sd = (d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let t = m / (sd / (n as f64).sqrt());
        let p = 1.0 - t_cdf_closed_form(t, n as u32 - 1);
        worst = worst.max((r.p_value - p).abs());
        let want = if p <= 0.05 {
            Verdict::Better
        } else if 1.0 - p <= 0.05 {
            Verdict::Worse
        } else {
            Verdict::NoDiff
        };
        verdict_mismatch += usize::from(want != r.verdict);
    }
    hard(
        worst <= 1e-9 && verdict_mismatch == 0,
        format!("100 paired samples (df 4 and 9): max |p - reference| = {worst:.2e}, verdict mismatches {verdict_mismatch}"),
    )
}

fn criterion_10() -> Outcome {
    let manifest = "data = blobs\ndata.n = 600\nmode = ensloss\nhidden = 16,16\nepochs = 15\nbatch_size = 32\n\
                    dropout = 0.1\nlambda_pool = 0,0.5,1\nresample_T = 5\nseed = 11\n";
    let kv = KvMap::parse(manifest, std::path::Path::new("manifest")).unwrap();
    let spec = RunSpec::from_kv(&kv).unwrap();
    let run = |spec: &RunSpec| {
        let data = spec.data.load::<f64>(spec.train.seed).unwrap();
        let (_, rec) = train(&data, &spec.model, &spec.train).unwrap();
        serde_json::to_string(&rec).unwrap() + &rec.to_jsonl()
    };
    let a = run(&spec);
    let b = run(&spec);
    // the rendered manifest must describe the same run
    let reparsed = RunSpec::from_kv(&KvMap::parse(&spec.to_kv().to_string(), std::path::Path::new("m")).unwrap()).unwrap();
    let c = run(&reparsed);
    let train_ok = a == b && a == c;

    let mut cfg = overfitting_config();
    cfg.datasets = vec![DataSource::Synthetic(SyntheticSpec::gaussian_blobs(300, 2, 2.0))];
    cfg.methods = vec![TrainMode::EnsLoss, TrainMode::Fixed("hinge".into())];
    cfg.seeds = vec![0, 1, 2];
    cfg.model = ModelSpec::mlp(1, 8);
    cfg.base.epochs = 5;
    cfg.jobs = 2;
    let outputs = |dir: PathBuf| {
        let _ = std::fs::remove_dir_all(&dir);
        let r = run_benchmark(&cfg, Some(&dir)).unwrap();
        r.write_outputs(&dir).unwrap();
        ["comparison.csv", "tests.json", "summary.txt", "runs/gaussian_blobs__ensloss__seed1/runrecord.jsonl"]
            .iter()
            .map(|f| std::fs::read(dir.join(f)).unwrap())
            .collect::<Vec<_>>()
    };
    let bench_ok = outputs(out_dir("determinism_a")) == outputs(out_dir("determinism_b"));
    hard(
        train_ok && bench_ok,
        format!("train records byte-identical across 3 runs = {train_ok}; bench outputs byte-identical = {bench_ok}"),
    )
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let criteria: [(usize, fn() -> Outcome); 10] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    let mut hard_failures = 0;
    for (id, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let o = f();
        let status = match (o.pass, o.soft) {
            (true, _) => "PASS",
            (false, true) => "FAIL (soft)",
            (false, false) => "FAIL",
        };
        if !o.pass && !o.soft {
            hard_failures += 1;
        }
        println!("criterion {id:>2} {status}: {}", o.detail);
    }
    if hard_failures > 0 {
        println!("{hard_failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
