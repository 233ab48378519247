//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! The report goes straight to stdout, so it shows in a plain `cargo test`.

use std::fs;
use std::io::Write;
use std::time::Instant;

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scpnet_core::data::{generate_synthetic, SyntheticSpec};
use scpnet_core::evaluation::{compute_cmc, compute_map, Exclusion};
use scpnet_core::experiment::{run_trend, TrendSetup};
use scpnet_core::losses::{
    classification_loss, classification_loss_grad, scp_loss, scp_loss_grad, trihard_loss, trihard_loss_grad,
    Margin,
};
use scpnet_core::model::branches::{
    concat_parts, global_average_pool, global_branch, local_branch, split_channels, Conv1x1, FeatureMap,
};
use scpnet_core::training::{load_train_checkpoint, overfit_smoke, SmokeConfig, Trainer, LAST_CHECKPOINT, LOSS_LOG_FILE};
use scpnet_core::{build_model, lr_at, ModelConfig, TrainConfig};

/// Criteria that do not hold for the default toy configuration. They are
/// still run and reported; see the README for the measurements.
const KNOWN_FAILING: &[usize] = &[7, 8];

struct Outcome {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
}

/// Writes to the stdout handle directly so the report shows even when the
/// harness captures test output.
fn say(line: String) {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").unwrap();
    out.flush().unwrap();
}

fn report(id: usize, name: &'static str, passed: bool, detail: String) -> Outcome {
    say(format!(
        "criterion {id:>2} [{}] {name}: {detail}",
        if passed { "PASS" } else { "FAIL" }
    ));
    Outcome { id, name, passed, detail }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller keeps the test free of extra dependencies.
    let u1: f64 = rng.random_range(1e-12..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || gaussian(rng))
}

/// Relative error between two gradient tensors with a small absolute floor.
fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale = analytic
        .iter()
        .map(|a| a * a)
        .sum::<f64>()
        .sqrt()
        .max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt())
        .max(1e-6);
    diff / scale
}

fn central_difference(x: &Array2<f64>, f: impl Fn(&Array2<f64>) -> f64) -> Vec<f64> {
    let h = 1e-6;
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for idx in 0..x.len() {
        let orig = probe.as_slice().unwrap()[idx];
        probe.as_slice_mut().unwrap()[idx] = orig + h;
        let plus = f(&probe);
        probe.as_slice_mut().unwrap()[idx] = orig - h;
        let minus = f(&probe);
        probe.as_slice_mut().unwrap()[idx] = orig;
        out.push((plus - minus) / (2.0 * h));
    }
    out
}

/// Labels for `n` samples over `ids` identities with at least one repeat.
fn batch_labels(rng: &mut ChaCha8Rng, n: usize, ids: usize) -> Vec<usize> {
    loop {
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..ids)).collect();
        let distinct = labels.iter().collect::<std::collections::BTreeSet<_>>().len();
        let repeated = (0..n).any(|i| labels[i + 1..].contains(&labels[i]));
        if distinct >= 2 && repeated {
            return labels;
        }
    }
}

fn gradient_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = [0.0f64; 3];
    for _ in 0..50 {
        // Parallelism loss.
        let r = rng.random_range(1..5);
        let c = rng.random_range(1..6);
        let local = random_matrix(&mut rng, r, c);
        let global = random_matrix(&mut rng, r, c);
        let eval = |l: &Array2<f64>, g: &Array2<f64>| {
            let lr: Vec<&[f64]> = l.outer_iter().map(|row| row.to_slice().unwrap()).collect();
            let gr: Vec<&[f64]> = g.outer_iter().map(|row| row.to_slice().unwrap()).collect();
            scp_loss(&lr, &gr).unwrap()
        };
        let lr: Vec<&[f64]> = local.outer_iter().map(|row| row.to_slice().unwrap()).collect();
        let gr: Vec<&[f64]> = global.outer_iter().map(|row| row.to_slice().unwrap()).collect();
        let (_, dl, dg) = scp_loss_grad(&lr, &gr).unwrap();
        let num_l = central_difference(&local, |l| eval(l, &global));
        let num_g = central_difference(&global, |g| eval(&local, g));
        let e = rel_error(&dl.concat(), &num_l).max(rel_error(&dg.concat(), &num_g));
        worst[0] = worst[0].max(e);

        // Batch-hard triplet loss.
        let n = rng.random_range(4..11);
        let labels = batch_labels(&mut rng, n, 3);
        let dim = rng.random_range(2..6);
        let emb = random_matrix(&mut rng, n, dim);
        let margin = if rng.random_bool(0.5) { Margin::Hard(0.3) } else { Margin::Soft };
        let (_, g) = trihard_loss_grad(emb.view(), &labels, margin).unwrap();
        let num = central_difference(&emb, |e| trihard_loss(e.view(), &labels, margin).unwrap());
        worst[1] = worst[1].max(rel_error(g.as_slice().unwrap(), &num));

        // Cross-entropy.
        let k = rng.random_range(2..7);
        let n = rng.random_range(1..6);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let logits = random_matrix(&mut rng, n, k) * 3.0;
        let (_, g) = classification_loss_grad(logits.view(), &labels).unwrap();
        let num = central_difference(&logits, |l| classification_loss(l.view(), &labels).unwrap());
        worst[2] = worst[2].max(rel_error(g.as_slice().unwrap(), &num));
    }
    let passed = worst.iter().all(|&e| e < 1e-4);
    report(
        1,
        "loss gradients vs finite differences",
        passed,
        format!(
            "worst relative error scp {:.1e}, trihard {:.1e}, ce {:.1e} (limit 1e-4, 50 instances each)",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn euclidean(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Every (anchor, positive, negative) triple, keeping each anchor's worst.
fn brute_force_trihard(emb: &Array2<f64>, labels: &[usize], margin: f64) -> f64 {
    let n = labels.len();
    let mut total = 0.0;
    for a in 0..n {
        let mut worst = f64::NEG_INFINITY;
        for p in (0..n).filter(|&p| labels[p] == labels[a]) {
            for q in (0..n).filter(|&q| labels[q] != labels[a]) {
                let v = margin + euclidean(emb.row(a), emb.row(p)) - euclidean(emb.row(a), emb.row(q));
                worst = worst.max(v.max(0.0));
            }
        }
        total += worst;
    }
    total / n as f64
}

fn trihard_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(3..17);
        let ids = rng.random_range(2..5);
        let labels = batch_labels(&mut rng, n, ids);
        let dim = rng.random_range(1..9);
        let emb = random_matrix(&mut rng, n, dim);
        let ours = trihard_loss(emb.view(), &labels, Margin::Hard(0.3)).unwrap();
        worst = worst.max((ours - brute_force_trihard(&emb, &labels, 0.3)).abs());
    }
    report(
        2,
        "trihard vs brute-force enumeration",
        worst < 1e-6,
        format!("max abs difference {worst:.1e} over 200 batches (limit 1e-6)"),
    )
}

/// Straightforward ranking: sort by (distance, gallery index), drop
/// excluded entries, then read off CMC and AP per query.
fn brute_force_metrics(
    dist: &Array2<f64>,
    ql: &[u32],
    gl: &[u32],
    qc: &[u32],
    gc: &[u32],
    same_cam_excluded: bool,
) -> Option<(Vec<f64>, f64)> {
    let n = gl.len();
    let mut cmc = vec![0.0; n];
    let mut ap_total = 0.0;
    let mut valid = 0usize;
    for q in 0..ql.len() {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| dist[[q, a]].partial_cmp(&dist[[q, b]]).unwrap().then(a.cmp(&b)));
        let kept: Vec<usize> = order
            .into_iter()
            .filter(|&g| !(same_cam_excluded && gl[g] == ql[q] && gc[g] == qc[q]))
            .collect();
        let hits: Vec<bool> = kept.iter().map(|&g| gl[g] == ql[q]).collect();
        if !hits.contains(&true) {
            continue;
        }
        valid += 1;
        let first = hits.iter().position(|&h| h).unwrap();
        for v in &mut cmc[first..] {
            *v += 1.0;
        }
        let mut found = 0.0;
        let mut precision = 0.0;
        for (rank, &h) in hits.iter().enumerate() {
            if h {
                found += 1.0;
                precision += found / (rank + 1) as f64;
            }
        }
        ap_total += precision / found;
    }
    if valid == 0 {
        return None;
    }
    Some((cmc.iter().map(|v| v / valid as f64).collect(), ap_total / valid as f64))
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut mismatched_errors = 0;
    for _ in 0..500 {
        let q = rng.random_range(1..21);
        let n = rng.random_range(1..51);
        let ids = rng.random_range(1..6);
        let ql: Vec<u32> = (0..q).map(|_| rng.random_range(0..ids)).collect();
        let gl: Vec<u32> = (0..n).map(|_| rng.random_range(0..ids)).collect();
        let qc: Vec<u32> = (0..q).map(|_| rng.random_range(0..3)).collect();
        let gc: Vec<u32> = (0..n).map(|_| rng.random_range(0..3)).collect();
        // Coarse values so ties are common.
        let dist = Array2::from_shape_simple_fn((q, n), || rng.random_range(0..8) as f64 * 0.5);
        let excl = rng.random_bool(0.5);
        let exclusion = if excl { Exclusion::SameIdSameCam } else { Exclusion::None };
        let cmc = compute_cmc(dist.view(), &ql, &gl, &qc, &gc, exclusion);
        let map = compute_map(dist.view(), &ql, &gl, &qc, &gc, exclusion);
        match (brute_force_metrics(&dist, &ql, &gl, &qc, &gc, excl), cmc, map) {
            (Some((ref_cmc, ref_map)), Ok(cmc), Ok(map)) => {
                for (a, b) in cmc.cmc.iter().zip(&ref_cmc) {
                    worst = worst.max((a - b).abs());
                }
                worst = worst.max((map.map - ref_map).abs());
            }
            (None, Err(_), Err(_)) => {}
            _ => mismatched_errors += 1,
        }
    }
    // Positives at ranks 1 and 3: AP = (1/1 + 2/3) / 2.
    let hand = compute_map(
        Array2::from_shape_vec((1, 3), vec![0.1, 0.2, 0.3]).unwrap().view(),
        &[1],
        &[1, 2, 1],
        &[1],
        &[2, 2, 2],
        Exclusion::None,
    )
    .unwrap()
    .map;
    let hand_ok = (hand - 5.0 / 6.0).abs() < 1e-12;
    report(
        3,
        "CMC/mAP vs brute-force ranking",
        worst < 1e-9 && mismatched_errors == 0 && hand_ok,
        format!(
            "max abs difference {worst:.1e} over 500 instances, {mismatched_errors} error mismatches, AP(+,-,+) = {hand:.12}"
        ),
    )
}

fn architecture_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_commute: f64 = 0.0;
    let mut roundtrip_ok = true;
    for _ in 0..100 {
        let c = rng.random_range(1..9);
        let r = [1, 2, 4][rng.random_range(0..3)];
        let h = r * rng.random_range(1..4);
        let w = rng.random_range(1..5);
        let values = Array3::from_shape_simple_fn((c, h, w), || gaussian(&mut rng) as f32);
        let fm = FeatureMap::new(values.clone()).unwrap();
        let weight = Array2::from_shape_simple_fn((r * c, c), || gaussian(&mut rng) as f32);
        let bias = Array1::from_shape_simple_fn(r * c, || gaussian(&mut rng) as f32);
        let conv = Conv1x1::new(weight.clone(), bias.clone()).unwrap();
        let global = global_branch(&fm, &conv).unwrap();

        let gap = global_average_pool(&values.clone().insert_axis(ndarray::Axis(0)));
        let gap64 = gap.row(0).mapv(|v| v as f64);
        let direct = weight.mapv(|v| v as f64).dot(&gap64) + bias.mapv(|v| v as f64);
        let scale = direct.iter().map(|v| v.abs()).fold(1e-3, f64::max);
        for (a, b) in global.values.iter().zip(direct.iter()) {
            worst_commute = worst_commute.max((*a as f64 - b).abs() / scale);
        }

        let flat = global.values.to_vec();
        let parts = split_channels(&flat, r).unwrap();
        let back = concat_parts(&parts);
        roundtrip_ok &= back.iter().zip(&flat).all(|(a, b)| a.to_bits() == b.to_bits());
    }

    // Hand-built maps with exactly representable stripe means.
    let column = FeatureMap::new(Array3::from_shape_vec((1, 4, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
    let parts = local_branch(&column, 2).unwrap();
    let mut hand_ok = parts.parts.as_slice().unwrap() == [1.5, 3.5];
    let constant = FeatureMap::new(Array3::from_elem((3, 8, 4), 0.25)).unwrap();
    hand_ok &= local_branch(&constant, 4).unwrap().parts.iter().all(|&v| v == 0.25);
    let two = FeatureMap::new(
        Array3::from_shape_vec((2, 2, 2), vec![1.0, 3.0, 5.0, 7.0, -2.0, 0.0, 4.0, 4.0]).unwrap(),
    )
    .unwrap();
    let p = local_branch(&two, 2).unwrap();
    hand_ok &= p.parts.as_slice().unwrap() == [2.0, -1.0, 6.0, 4.0];

    report(
        4,
        "GAP/1x1 commutation, split round trip, stripe means",
        worst_commute < 1e-5 && roundtrip_ok && hand_ok,
        format!(
            "commutation rel error {worst_commute:.1e} (limit 1e-5), round trip bitwise {roundtrip_ok}, hand stripe means {hand_ok}"
        ),
    )
}

fn desk_data(ids: usize, per_id: usize, seed: u64) -> Vec<scpnet_core::data::LabeledSample> {
    generate_synthetic(&SyntheticSpec::desk(ids, per_id), &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Criteria 5 and 10 share the same desk-scale runs.
fn logged_runs() -> (Outcome, Outcome) {
    let data = desk_data(32, 8, 10);
    let cfg = TrainConfig { seed: 10, ..TrainConfig::desk() };
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, until: Option<u64>| {
        let mut model = build_model(ModelConfig::toy(32), 10).unwrap();
        let path = dir.path().join(name);
        let mut trainer = Trainer::new(&mut model, &data, &cfg).unwrap().with_run_dir(&path);
        trainer.run(until).unwrap()
    };
    let started = Instant::now();
    let rows = run("a", None);
    run("b", None);
    let log_a = fs::read_to_string(dir.path().join("a").join(LOSS_LOG_FILE)).unwrap();
    let log_b = fs::read_to_string(dir.path().join("b").join(LOSS_LOG_FILE)).unwrap();

    let worst = rows
        .iter()
        .map(|r| {
            let l = r.loss;
            let expected = l.l_class + l.l_metric + cfg.loss.lambda_scp * l.l_scp;
            (l.total - expected).abs() / expected.abs().max(1e-12)
        })
        .fold(0.0, f64::max);
    let eq = report(
        5,
        "logged total = class + metric + lambda*scp",
        worst < 1e-6 && !rows.is_empty(),
        format!("{} logged steps, worst relative residual {worst:.1e} (limit 1e-6)", rows.len()),
    );

    let half = rows.len() as u64 / 2;
    run("c", Some(half));
    let resumed = load_train_checkpoint(&dir.path().join("c").join(LAST_CHECKPOINT)).unwrap();
    let mut model = resumed.model;
    Trainer::resume(&mut model, &data, &resumed.config, resumed.state)
        .unwrap()
        .with_run_dir(dir.path().join("c"))
        .run(None)
        .unwrap();
    let log_c = fs::read_to_string(dir.path().join("c").join(LOSS_LOG_FILE)).unwrap();
    let det = report(
        10,
        "determinism and resume",
        log_a == log_b && log_a == log_c,
        format!(
            "{} steps; repeat run identical {}, resumed at step {half} identical {} ({:.0?})",
            rows.len(),
            log_a == log_b,
            log_a == log_c,
            started.elapsed()
        ),
    );
    (eq, det)
}

fn overfit() -> Outcome {
    let data = generate_synthetic(&SyntheticSpec::clean(4, 4), &mut ChaCha8Rng::seed_from_u64(0));
    let mut model = build_model(ModelConfig::toy(4), 0).unwrap();
    let started = Instant::now();
    let out = overfit_smoke(&mut model, &data, &SmokeConfig::default()).unwrap();
    report(
        6,
        "overfit smoke on 4 identities",
        out.passed,
        format!(
            "accuracy {:.2}, scp {:.2e} after {} steps ({:.0?})",
            out.accuracy,
            out.scp,
            out.steps,
            started.elapsed()
        ),
    )
}

fn trend_and_locality() -> (Outcome, Outcome) {
    let setup = TrendSetup::desk();
    let started = Instant::now();
    let mut gains = Vec::new();
    let mut lines = Vec::new();
    let mut locality = Vec::new();
    for seed in 0..3 {
        let (_, with) = run_trend(&setup, 10.0, seed).unwrap();
        let (_, without) = run_trend(&setup, 0.0, seed).unwrap();
        gains.push(with.occluded_rank1() - without.occluded_rank1());
        lines.push(format!(
            "seed {seed}: {:.3} vs {:.3}",
            with.occluded_rank1(),
            without.occluded_rank1()
        ));
        if seed == 0 {
            locality = with.locality.clone();
        }
    }
    let wins = gains.iter().filter(|&&g| g > 0.0).count();
    let mean = gains.iter().sum::<f64>() / gains.len() as f64;
    let elapsed = started.elapsed();
    let trend = report(
        7,
        "scp improves occluded rank-1",
        wins >= 2 && mean > 0.0 && elapsed.as_secs() < 1800,
        format!(
            "lambda 10 vs 0 rank-1 {}; wins {wins}/3, mean gain {mean:+.3} ({elapsed:.0?})",
            lines.join(", ")
        ),
    );
    let uniform = 1.0 / locality.len() as f64;
    let local_parts = locality.iter().filter(|&&s| s > uniform).count();
    let loc = report(
        8,
        "part activations concentrate in their stripe",
        local_parts >= 3,
        format!("in-stripe mass per part {locality:.3?} vs uniform {uniform:.3}; {local_parts}/4 above"),
    );
    (trend, loc)
}

fn schedule() -> Outcome {
    let cfg = TrainConfig::paper();
    let expected = [(0, 1e-3), (79, 1e-3), (80, 1e-4), (179, 1e-4), (180, 1e-5), (299, 1e-5)];
    let got: Vec<f64> = expected.iter().map(|&(e, _)| lr_at(e, &cfg)).collect();
    let passed = expected.iter().zip(&got).all(|(&(_, want), &g)| g == want);
    report(
        9,
        "learning-rate schedule",
        passed,
        format!("lr at epochs 0/79/80/179/180/299 = {got:?}"),
    )
}

#[test]
fn acceptance() {
    let mut outcomes = vec![gradient_suite(), trihard_oracle(), metric_oracle(), architecture_algebra()];
    let (eq, det) = logged_runs();
    outcomes.push(eq);
    outcomes.push(overfit());
    let (trend, loc) = trend_and_locality();
    outcomes.push(trend);
    outcomes.push(loc);
    outcomes.push(schedule());
    outcomes.push(det);
    outcomes.sort_by_key(|o| o.id);

    say("\nsummary".into());
    for o in &outcomes {
        say(format!("  {:>2} {} {}", o.id, if o.passed { "PASS" } else { "FAIL" }, o.name));
    }
    let unexpected: Vec<String> = outcomes
        .iter()
        .filter(|o| o.passed == KNOWN_FAILING.contains(&o.id))
        .map(|o| format!("criterion {} ({}): {}", o.id, o.name, o.detail))
        .collect();
    assert!(unexpected.is_empty(), "acceptance status changed:\n{}", unexpected.join("\n"));
}
