//! Acceptance suite: one PASS/FAIL line per criterion, with the measured
//! values behind it. Runs without the test harness so the lines are always
//! shown; the process fails only when a computation errors out, not when a
//! criterion is missed.

use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal, Uniform};
use rand_pcg::Pcg64;
use roml::bench::{
    brute_force_miap, detection_precision_recall, generate, generate_rank4_coords, recovery_rate, SyntheticSpec,
    DEFAULT_TRIALS,
};
use roml::embed::{laplacian_embed, AffinityMatrix, PointSet, DEFAULT_SIGMA_DES, DEFAULT_SIGMA_SPA};
use roml::features::normalize_features;
use roml::lsap::{brute_force_lsap, solve_lsap, AssignmentProblem};
use roml::prox::{l1_norm, nuclear_norm, soft_threshold, svt, DenseMatrix};
use roml::rpca::{solve_rpca, RpcaConfig};
use roml::select::{detect_true_inliers, estimate_inlier_count, DEFAULT_DELTA, DEFAULT_XI};
use roml::solver::{assemble_d, random_ppms};
use roml::{solve_roml, FeatureSet, MatchReport, RomlConfig, StackingMode};

type Outcome = roml::Result<(bool, String)>;

fn gaussian(rows: usize, cols: usize, rng: &mut Pcg64) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean recovery over the grid; every cell must reach 0.99. The reports of
/// the hardest cell are kept for the convergence check.
fn recovery_region(corner: &mut Vec<MatchReport>) -> Outcome {
    let mut worst = (f64::INFINITY, 0, 0.0);
    let mut failing = Vec::new();
    for outliers in [0usize, 8, 16, 24, 32] {
        for ratio in [0.0, 0.2, 0.4] {
            let mut rates = Vec::new();
            for seed in 0..DEFAULT_TRIALS as u64 {
                let spec = SyntheticSpec::new(30, 10, 10 + outliers, 50)
                    .with_sparse_errors(ratio)
                    .with_seed(seed);
                let (sets, truth) = generate(&spec)?;
                let report = solve_roml(&sets, &RomlConfig::descriptor(10).with_seed(seed))?;
                rates.push(recovery_rate(&report.ppms, &truth.ppms)?);
                if outliers == 32 && ratio == 0.4 {
                    corner.push(report);
                }
            }
            let m = mean(&rates);
            println!("    outliers {outliers:2}, error ratio {ratio:.1}: mean recovery {m:.4} {rates:.3?}");
            if m < 0.99 {
                failing.push(format!("({outliers}, {ratio})"));
            }
            if m < worst.0 {
                worst = (m, outliers, ratio);
            }
        }
    }
    Ok((
        failing.is_empty(),
        format!(
            "worst cell ({}, {}) mean {:.4}; cells below 0.99: {}",
            worst.1,
            worst.2,
            worst.0,
            if failing.is_empty() { "none".to_string() } else { failing.join(" ") }
        ),
    ))
}

fn convergence(corner: &[MatchReport]) -> Outcome {
    let mut ok = true;
    let mut finals = Vec::new();
    for r in corner {
        let d_norm = r.d.norm();
        let first_below = r
            .residual_history
            .iter()
            .position(|res| res.primal / d_norm < 1e-6);
        let finite = !r.objective_history.is_empty() && r.objective_history.iter().all(|v| v.is_finite());
        ok &= first_below.is_some() && finite;
        finals.push(format!(
            "{}@{}",
            first_below.map_or("never".into(), |i| (i + 1).to_string()),
            r.iterations_used
        ));
    }
    ok &= corner.len() == DEFAULT_TRIALS;
    Ok((ok, format!("first iteration below 1e-6 / iterations run, per trial: {}", finals.join(" "))))
}

fn inlier_count() -> Outcome {
    let mut hits = 0;
    let mut found = Vec::new();
    for ratio in [0.2, 0.4] {
        for seed in 0..DEFAULT_TRIALS as u64 {
            let spec = SyntheticSpec::new(30, 10, 30, 50).with_sparse_errors(ratio).with_seed(seed);
            let (sets, _) = generate(&spec)?;
            let est = estimate_inlier_count(&sets, &RomlConfig::descriptor(1).with_seed(seed), DEFAULT_DELTA, Some(15))?;
            if est.found && est.n_hat == 10 {
                hits += 1;
            }
            found.push(if est.found { est.n_hat.to_string() } else { "none".into() });
        }
    }
    Ok((hits >= 9, format!("n_hat = 10 in {hits}/10 runs; estimates {}", found.join(" "))))
}

fn inlier_detection() -> Outcome {
    // Precision / recall per noise level (rows) and missing ratio (columns).
    let table = [
        [(1.00, 1.00), (1.00, 1.00), (1.00, 1.00), (1.00, 1.00)],
        [(1.00, 1.00), (1.00, 1.00), (1.00, 0.99), (0.99, 0.98)],
        [(1.00, 0.99), (1.00, 0.96), (1.00, 0.95), (0.99, 0.92)],
    ];
    let mut within = 0;
    for (row, noise) in [0.1, 0.3, 0.5].into_iter().enumerate() {
        for (col, missing) in [0.05, 0.1, 0.3, 0.5].into_iter().enumerate() {
            let mut ps = Vec::new();
            let mut rs = Vec::new();
            for seed in 0..DEFAULT_TRIALS as u64 {
                let spec = SyntheticSpec::new(30, 10, 30, 50)
                    .with_sparse_errors(noise)
                    .with_missing(missing)
                    .with_seed(seed);
                let (sets, truth) = generate(&spec)?;
                let report = solve_roml(&sets, &RomlConfig::descriptor(10).with_seed(seed))?;
                let mask = detect_true_inliers(&report.d, 50, 10, DEFAULT_XI)?;
                let (p, r) = detection_precision_recall(&mask, &truth, &report.ppms)?;
                ps.push(p);
                rs.push(r);
            }
            let (p, r) = (mean(&ps), mean(&rs));
            let (tp, tr) = table[row][col];
            let ok = (p - tp).abs() <= 0.03 && (r - tr).abs() <= 0.05;
            within += usize::from(ok);
            println!(
                "    noise {noise:.1}, missing {missing:.2}: {p:.2}/{r:.2} (reference {tp:.2}/{tr:.2}) {}",
                if ok { "ok" } else { "off" }
            );
        }
    }
    Ok((within == 12, format!("{within}/12 cells within tolerance")))
}

fn oracle_hits(err: f64) -> roml::Result<(usize, Vec<String>)> {
    let mut ok = 0;
    let mut misses = Vec::new();
    for i in 0..50u64 {
        let n_k = 3 + (i % 2) as usize;
        let spec = SyntheticSpec::new(3, 2, n_k, 5).with_sparse_errors(err).with_seed(1000 + i);
        let (sets, _) = generate(&spec)?;
        let report = solve_roml(&sets, &RomlConfig::descriptor(2).with_seed(i))?;
        let found = nuclear_norm(&assemble_d(&sets, &report.ppms, StackingMode::Descriptor)?)?;
        let (_, optimum) = brute_force_miap(&sets, 2, StackingMode::Descriptor)?;
        if found <= optimum + 1e-6 {
            ok += 1;
        } else {
            misses.push(format!("#{i}: {found:.4} vs {optimum:.4}"));
        }
    }
    Ok((ok, misses))
}

fn oracle_equivalence() -> Outcome {
    // Shared inliers plus outliers; sparse errors are reported for reference only.
    for err in [0.1, 0.2, 0.4] {
        let (ok, _) = oracle_hits(err)?;
        println!("    with sparse error ratio {err}: {ok}/50 (not scored)");
    }
    let (ok, misses) = oracle_hits(0.0)?;
    if !misses.is_empty() {
        println!("    suboptimal instances: {}", misses.join(", "));
    }
    Ok((ok >= 45, format!("{ok}/50 instances reach the exhaustive optimum")))
}

fn lsap_exactness() -> Outcome {
    let mut rng = Pcg64::seed_from_u64(6);
    let mut agree = 0;
    for _ in 0..500 {
        let n_src = rng.random_range(1..=8);
        let n_tgt = rng.random_range(1..=n_src);
        let cost = DenseMatrix::from_fn(n_src, n_tgt, |_, _| rng.random_range(-10.0..10.0));
        let problem = AssignmentProblem::new(cost)?;
        let (_, fast) = solve_lsap(&problem);
        let (_, slow) = brute_force_lsap(&problem)?;
        if (fast - slow).abs() <= 1e-9 * (1.0 + slow.abs()) {
            agree += 1;
        }
    }
    Ok((agree == 500, format!("{agree}/500 totals agree")))
}

fn energy_constancy() -> Outcome {
    let mut rng = Pcg64::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for s in 0..100u64 {
        let d = rng.random_range(2..=12);
        let n_k = rng.random_range(2..=15);
        let n = rng.random_range(1..=n_k);
        let c = rng.random_range(0.1..200.0);
        let fs = normalize_features(&FeatureSet::new(gaussian(d, n_k, &mut rng), "f")?, c)?;
        let sets = [fs];
        for t in 0..100u64 {
            let ppms = random_ppms(&sets, n, s * 1000 + t)?;
            let energy = assemble_d(&sets, &ppms, StackingMode::Descriptor)?.norm_squared();
            let expected = n as f64 * c * c;
            worst = worst.max((energy - expected).abs() / expected);
        }
    }
    Ok((worst < 1e-9, format!("largest relative deviation {worst:.2e}")))
}

fn proximal_correctness() -> Outcome {
    let mut rng = Pcg64::seed_from_u64(8);
    let mut failures = 0;
    for _ in 0..20 {
        let (r, c) = (rng.random_range(2..=8), rng.random_range(2..=8));
        let m = gaussian(r, c, &mut rng) * 3.0;
        let tau = rng.random_range(0.1..3.0);
        let nuc = |x: &DenseMatrix| tau * nuclear_norm(x).unwrap() + 0.5 * (x - &m).norm_squared();
        let l1 = |x: &DenseMatrix| tau * l1_norm(x) + 0.5 * (x - &m).norm_squared();
        let (x_svt, _) = svt(&m, tau)?;
        let x_soft = soft_threshold(&m, tau)?;
        let (best_svt, best_soft) = (nuc(&x_svt), l1(&x_soft));
        for i in 0..1000 {
            let scale = [1e-4, 1e-2, 1.0][i % 3];
            let p = gaussian(r, c, &mut rng) * scale;
            if nuc(&(&x_svt + &p)) < best_svt - 1e-12 {
                failures += 1;
            }
            if l1(&(&x_soft + &p)) < best_soft - 1e-12 {
                failures += 1;
            }
        }
    }
    Ok((failures == 0, format!("{failures} of 40000 perturbations improved an objective")))
}

fn rpca_recovery() -> Outcome {
    let mut rng = Pcg64::seed_from_u64(9);
    let l0 = gaussian(50, 2, &mut rng) * gaussian(2, 30, &mut rng);
    let mut e0 = DenseMatrix::zeros(50, 30);
    let magnitude = Uniform::new(-5.0, 5.0).expect("valid range");
    for idx in rand::seq::index::sample(&mut rng, 1500, 75) {
        e0[(idx % 50, idx / 50)] = magnitude.sample(&mut rng);
    }
    let r = solve_rpca(&(&l0 + &e0), &RpcaConfig::with_lambda(1.0 / 50f64.sqrt()))?;
    let err = (&r.l - &l0).norm() / l0.norm();
    Ok((err < 1e-3, format!("relative error {err:.2e} after {} iterations", r.iterations)))
}

fn coordinate_mode() -> Outcome {
    let mut rates = Vec::new();
    for seed in 0..DEFAULT_TRIALS as u64 {
        let (sets, truth) = generate_rank4_coords(15, 10, 5, 0.0, seed)?;
        let report = solve_roml(&sets, &RomlConfig::coordinate(10).with_seed(seed))?;
        rates.push(recovery_rate(&report.ppms, &truth.ppms)?);
    }
    let m = mean(&rates);
    Ok((m >= 0.95, format!("mean recovery {m:.4} over seeds {rates:.3?}")))
}

fn point_set(rng: &mut Pcg64, n: usize, dim: usize) -> PointSet {
    let coords = DenseMatrix::from_fn(2, n, |_, _| rng.random_range(0.0..40.0));
    let descriptors = normalize_features(&FeatureSet::new(gaussian(dim, n, rng), "p").unwrap(), 1.0)
        .unwrap()
        .features()
        .clone();
    PointSet::new(coords, descriptors).unwrap()
}

fn embedding() -> Outcome {
    let mut rng = Pcg64::seed_from_u64(10);
    let pts: Vec<PointSet> = [7, 6, 8].iter().map(|&n| point_set(&mut rng, n, 6)).collect();
    let aff = AffinityMatrix::build(&pts, DEFAULT_SIGMA_SPA, 0.6)?;
    let emb = laplacian_embed(&aff, 3)?;
    let deg = DenseMatrix::from_diagonal(&DVector::from_vec(aff.degrees()));
    let lap = aff.laplacian();
    let mut residual: f64 = 0.0;
    for (c, beta) in emb.eigenvalues.iter().enumerate() {
        let v = emb.coords.column(c);
        let dv = &deg * v;
        residual = residual.max((&lap * v - &dv * *beta).norm() / dv.norm());
    }
    let constraint = (emb.coords.transpose() * &deg * &emb.coords - DenseMatrix::identity(3, 3)).amax();

    // Two copies of one image: a well-spread chain with distinct descriptors.
    let chain = PointSet::new(
        DenseMatrix::from_fn(2, 8, |r, c| if r == 0 { 15.0 * c as f64 } else { 0.1 * (c * c) as f64 }),
        DenseMatrix::identity(8, 8),
    )?;
    let dup = laplacian_embed(&AffinityMatrix::build(&[chain.clone(), chain], DEFAULT_SIGMA_SPA, DEFAULT_SIGMA_DES)?, 2)?;
    let sets = dup.feature_sets()?;
    let gap = (sets[0].features() - sets[1].features()).amax();
    Ok((
        residual <= 1e-6 && constraint <= 1e-8 && gap <= 1e-3,
        format!("eigenpair residual {residual:.1e}, constraint error {constraint:.1e}, duplicate gap {gap:.1e}"),
    ))
}

fn report(id: usize, name: &str, start: Instant, outcome: Outcome, passed: &mut usize) -> bool {
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok((ok, detail)) => {
            *passed += usize::from(ok);
            println!("criterion {id:2} [{}] {name}: {detail} ({secs:.0}s)", if ok { "PASS" } else { "FAIL" });
            true
        }
        Err(e) => {
            println!("criterion {id:2} [FAIL] {name}: error: {e}");
            false
        }
    }
}

fn main() {
    // Honour `cargo test -- --list` and filters aimed at other targets.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    if let Some(filter) = args.iter().find(|a| !a.starts_with('-')) {
        if !"acceptance".contains(filter.as_str()) {
            return;
        }
    }

    let mut passed = 0;
    let mut healthy = true;
    let mut corner = Vec::new();
    let t = Instant::now();
    healthy &= report(1, "recovery region", t, recovery_region(&mut corner), &mut passed);
    let t = Instant::now();
    healthy &= report(2, "convergence", t, convergence(&corner), &mut passed);
    let t = Instant::now();
    healthy &= report(3, "inlier-count estimation", t, inlier_count(), &mut passed);
    let t = Instant::now();
    healthy &= report(4, "true-inlier detection", t, inlier_detection(), &mut passed);
    let t = Instant::now();
    healthy &= report(5, "oracle equivalence", t, oracle_equivalence(), &mut passed);
    let t = Instant::now();
    healthy &= report(6, "assignment exactness", t, lsap_exactness(), &mut passed);
    let t = Instant::now();
    healthy &= report(7, "selected-energy constancy", t, energy_constancy(), &mut passed);
    let t = Instant::now();
    healthy &= report(8, "proximal correctness", t, proximal_correctness(), &mut passed);
    let t = Instant::now();
    healthy &= report(9, "low-rank plus sparse recovery", t, rpca_recovery(), &mut passed);
    let t = Instant::now();
    healthy &= report(10, "coordinate mode", t, coordinate_mode(), &mut passed);
    let t = Instant::now();
    healthy &= report(11, "embedding", t, embedding(), &mut passed);
    println!("acceptance: {passed}/11 criteria passed");
    if !healthy {
        std::process::exit(1);
    }
}
