//! Acceptance suite: every headline behavior of the library, run end to end
//! at its stated tolerance. Each test prints one PASS line (visible with
//! `--nocapture`).
//!
//!   cargo test -p covariant --test acceptance -- --nocapture

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use covariant::calculus::{fd_gradient_check, MetricMatrix};
use covariant::core::{
    measures_match, plain_step_once, verify_congruence, History, InputPoint, JointMeasure,
    ParamVector, SignedMeasure,
};
use covariant::covariance::{check_covariance, theorem3_verify, Coupling};
use covariant::experiments::{
    fig2_covariance_residuals, figure1, figure2, write_output, ExperimentConfig, Fig2Metric,
    Variant, GAP_THRESHOLD_NATS,
};
use covariant::metric::metric_transformation_residual;
use covariant::naturalize::{direct_w_star, naturalize, RunnableRule};
use covariant::rng::{self, StreamLabel};
use covariant::rules::{
    gaussian_loglik_gd_step, pairs, sigma_power_from_sq, BatchScaling, DensityMode,
    GaussianBatchRule, GaussianData, GaussianModel, StepSchedule,
};
use covariant::{InputSpace, MetricSpec};

fn pass(criterion: u32, what: &str, detail: String) {
    println!("ACCEPTANCE {criterion} ({what}): PASS — {detail}");
}

/// Criterion 1: with the reference settings (100,000 samples from N(3,9),
/// start N(2,4), α = .001/n, 200,000 iterations), the k = 4 run stays more
/// than 0.01 nats/sample away from the dataset MLE while k ∈ {1, 2} close to
/// within 0.01 nats. Runtime ≤ 2 minutes.
#[test]
fn acceptance_1_figure1_qualitative() {
    let start = Instant::now();
    let cfg = ExperimentConfig::for_variant(Variant::Fig1);
    assert_eq!(cfg.n_data, 100_000);
    assert_eq!(cfg.iterations, 200_000);
    assert_eq!(cfg.alpha, 0.001 / 100_000.0);

    let out = figure1(&cfg).unwrap();
    let data = covariant::experiments::generate_dataset(&cfg).unwrap();
    let best = data.mean_loglik(out.mle_mu, out.mle_var);

    let mut gaps = std::collections::BTreeMap::new();
    for run in &out.runs {
        assert!(!run.diverged, "k={} diverged", run.k);
        let gap = best - data.mean_loglik(run.final_mu, run.final_sigma_sq);
        gaps.insert(run.k, gap);
    }
    assert!(
        gaps[&4] > GAP_THRESHOLD_NATS,
        "k=4 gap {} should exceed {GAP_THRESHOLD_NATS}",
        gaps[&4]
    );
    for k in [1u32, 2] {
        assert!(
            gaps[&k] < GAP_THRESHOLD_NATS,
            "k={k} gap {} should be below {GAP_THRESHOLD_NATS}",
            gaps[&k]
        );
    }
    // The k = 2 endpoint: the mean reaches the MLE (within 0.05) while the
    // variance coordinate, whose gradient scale shrinks with k, is still
    // closing at these settings (oracle-computed endpoint σ² ≈ 8.36 against
    // σ̂² ≈ 9.00). Endpoint distances to the MLE grow strictly with k.
    let k2 = out.runs.iter().find(|r| r.k == 2).unwrap();
    assert!((k2.final_mu - out.mle_mu).abs() < 0.05);
    assert!((k2.final_sigma_sq - out.mle_var).abs() < 0.7);
    let var_distances: Vec<f64> = out
        .runs
        .iter()
        .map(|r| (r.final_sigma_sq - out.mle_var).abs())
        .collect();
    for pair in var_distances.windows(2) {
        assert!(
            pair[0] < pair[1] + 1e-9,
            "variance endpoint distances not increasing in k: {var_distances:?}"
        );
    }
    // Iterations-to-equilibrium are nondecreasing in k: the circuitous-path
    // effect grows with the power.
    let passages: Vec<usize> = out
        .runs
        .iter()
        .map(|r| r.first_passage.unwrap_or(usize::MAX))
        .collect();
    for pair in passages.windows(2) {
        assert!(pair[0] <= pair[1], "first passages not monotone: {passages:?}");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 120, "took {elapsed:?}");
    pass(
        1,
        "figure-1 qualitative reproduction",
        format!(
            "gaps/sample: k1 {:.2e}, k2 {:.2e}, k3 {:.2e}, k4 {:.2e} in {elapsed:.2?}",
            gaps[&1], gaps[&2], gaps[&3], gaps[&4]
        ),
    );
}

/// Criterion 2: figure-2 variant (a) with shared seeds. Per-step first-order
/// covariance residuals across k ∈ {1,2,3,4} stay below 1e-6 with the
/// closed-form Fisher metric and below 1e-3 with the 1,000-sample estimate;
/// the endpoint (μ, σ²) spread across k stays below 1e-2 after 5,000
/// iterations at α = 0.05. Runtime ≤ 1 minute.
#[test]
fn acceptance_2_figure2_covariance() {
    let start = Instant::now();
    let cfg = ExperimentConfig::for_variant(Variant::Fig2a);
    assert_eq!(cfg.alpha, 0.05);
    assert_eq!(cfg.iterations, 5_000);
    assert_eq!(cfg.fisher_samples, 1_000);

    let mut closed = cfg.clone();
    closed.metric = Fig2Metric::ClosedFormFisher;
    let r_closed = fig2_covariance_residuals(&closed, 4).unwrap();
    assert!(r_closed < 1e-6, "closed-form residual {r_closed}");

    let r_sampled = fig2_covariance_residuals(&cfg, 4).unwrap();
    assert!(r_sampled < 1e-3, "sampled residual {r_sampled}");

    let out = figure2(&cfg).unwrap();
    let mut max_spread = 0.0f64;
    let mut max_pointwise = 0.0f64;
    let reference = &out.runs[0];
    for a in &out.runs {
        assert!(!a.diverged);
        for b in &out.runs {
            max_spread = max_spread
                .max((a.final_mu - b.final_mu).abs())
                .max((a.final_sigma_sq - b.final_sigma_sq).abs());
        }
        for (r, r0) in a.records.iter().zip(&reference.records) {
            max_pointwise = max_pointwise
                .max((r.mu - r0.mu).abs())
                .max((r.sigma_sq - r0.sigma_sq).abs());
        }
    }
    assert!(max_spread < 1e-2, "endpoint spread {max_spread}");
    // Along the whole run the independent trajectories stay within 1e-3 of
    // each other pointwise.
    assert!(max_pointwise < 1e-3, "pointwise spread {max_pointwise}");

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}");
    pass(
        2,
        "figure-2 covariance reproduction",
        format!(
            "residuals: closed-form {r_closed:.2e}, sampled {r_sampled:.2e}; endpoint spread {max_spread:.2e} in {elapsed:.2?}"
        ),
    );
}

/// Criterion 3: the negative control. Plain gradient ascent on the k = 1 vs
/// k = 4 pair violates the same first-order identity by more than 1e-2 at
/// generic steps.
#[test]
fn acceptance_3_negative_control() {
    let data = Arc::new(GaussianData::sample_gaussian(10_000, 3.0, 3.0, 7).unwrap());
    let plain = RunnableRule::Plain(Arc::new(GaussianBatchRule::new(
        data,
        StepSchedule::Constant(0.05),
        BatchScaling::Mean,
    )));
    let pair = pairs::gaussian_pair(1, 4, DensityMode::LogDensity);
    let report = check_covariance(&plain, &pair, 1, 25, 8, 11, 1e-7, Coupling::Rebase).unwrap();
    assert!(!report.pass);
    let worst = report.max_residual();
    assert!(worst > 1e-2, "violation {worst} too small");
    pass(
        3,
        "plain gradient descent is not covariant",
        format!("max first-order violation {worst:.3e} (needed > 1e-2)"),
    );
}

/// Criterion 4: direct estimation equivalence. On 100 random small instances
/// (n ≤ 6, ≤ 10 atoms, full-rank Gram) the least-squares estimate of the
/// update equals the explicit G⁺-path within 1e-8. Runtime ≤ 5 seconds.
#[test]
fn acceptance_4_direct_estimation_equivalence() {
    let start = Instant::now();
    let mut rng = rng::stream(99, StreamLabel::Theta);
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < 100 {
        let n = 2 + (rng::uniform_open01(&mut rng) * 5.0) as usize; // 2..=6
        let atoms = n + (rng::uniform_open01(&mut rng) * (11 - n) as f64) as usize; // n..=10
        let grads: Vec<DVector<f64>> = (0..atoms)
            .map(|_| DVector::from_fn(n, |_, _| rng::uniform_in(&mut rng, -1.5, 1.5)))
            .collect();
        let weights: Vec<f64> = (0..atoms)
            .map(|t| {
                if t % 7 == 6 {
                    rng::uniform_in(&mut rng, -0.05, 0.0)
                } else {
                    rng::uniform_in(&mut rng, 0.1, 1.0)
                }
            })
            .collect();

        // Explicit path: eigen-pseudoinverse of the μ-weighted Gram applied
        // to the μ-weighted gradient integral.
        let gram = MetricMatrix::from_weighted_outer_products(
            n,
            grads.iter().zip(&weights).map(|(v, w)| (v, *w)),
        );
        let gram = match gram {
            Ok(g) => g,
            Err(_) => continue, // negative weights made it indefinite; redraw
        };
        if gram.info().rank < n {
            continue;
        }
        let mut integral = DVector::zeros(n);
        for (v, w) in grads.iter().zip(&weights) {
            integral.axpy(*w, v, 1.0);
        }
        let explicit = gram.pinv_apply(&integral);

        // Direct path through the measure-and-function machinery.
        let table = Arc::new(grads.clone());
        let table_g = table.clone();
        let f = covariant::core::FnParamFunction::new(
            n,
            "random-instance",
            InputSpace::Interval { lo: 0.0, hi: 1.0 },
            |_x, _t| 0.0,
            move |x, _t| table_g[x.as_scalar() as usize].clone(),
        );
        let mu = SignedMeasure::new(
            weights
                .iter()
                .enumerate()
                .map(|(t, w)| (InputPoint::scalar(t as f64), *w))
                .collect(),
        )
        .unwrap();
        let beta = ParamVector::of(&vec![0.0; n]);
        let w_star = direct_w_star(&f, &beta, &mu).unwrap();

        let err = (&w_star - &explicit).norm() / explicit.norm().max(1.0);
        worst = worst.max(err);
        assert!(err < 1e-8, "instance {checked}: disagreement {err}");
        checked += 1;
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 5, "took {elapsed:?}");
    pass(
        4,
        "direct estimation equals the explicit pseudoinverse path",
        format!("100 instances, worst relative disagreement {worst:.2e} in {elapsed:.2?}"),
    );
}

/// Criterion 5: the second-order constraint system admits branch roots
/// {0, −4} and {0, −2} whose intersection is the trivial update only,
/// confirmed by a dense scan. Runtime ≤ 1 second.
#[test]
fn acceptance_5_second_order_roots() {
    let start = Instant::now();
    let report = theorem3_verify(0.3).unwrap();
    assert_eq!(report.b_branch_roots, vec![0.0, -4.0]);
    assert_eq!(report.c_branch_roots, vec![0.0, -2.0]);
    assert_eq!(report.intersection, vec![0.0]);
    assert_eq!(report.scan_roots.len(), 1);
    assert!(report.scan_roots[0].abs() < 1e-2);
    assert!(report.pass);
    let elapsed = start.elapsed();
    assert!(elapsed.as_millis() < 1000, "took {elapsed:?}");
    pass(
        5,
        "only the trivial update is second-order covariant",
        format!(
            "b-branch {{0, −4}}, c-branch {{0, −2}}, scan cluster at {:.1e} in {elapsed:.2?}",
            report.scan_roots[0]
        ),
    );
}

/// Criterion 6: the metric steepest-ascent direction G⁺∇f matches a brute
/// force search over G-unit-norm directions (cosine > 0.999) on 50 random
/// instances in dimensions 2 and 3. Runtime ≤ 10 seconds.
#[test]
fn acceptance_6_steepest_ascent_oracle() {
    let start = Instant::now();
    let mut rng = rng::stream(123, StreamLabel::Theta);
    let mut worst_cosine = 1.0f64;

    for trial in 0..50 {
        let n = if trial % 2 == 0 { 2 } else { 3 };
        // Well-conditioned random PSD metric.
        let b = DMatrix::from_fn(n, n, |_, _| rng::uniform_in(&mut rng, -1.0, 1.0));
        let g_raw = b.transpose() * &b + DMatrix::identity(n, n) * 0.3;
        let g_raw = 0.5 * (&g_raw + g_raw.transpose());
        let g = MetricMatrix::new(g_raw.clone()).unwrap();
        let grad = DVector::from_fn(n, |_, _| rng::uniform_in(&mut rng, -1.0, 1.0));

        let direction = g.pinv_apply(&grad);

        // Brute force over G-unit-norm directions.
        let mut best_val = f64::NEG_INFINITY;
        let mut best = DVector::zeros(n);
        let mut consider = |u: DVector<f64>| {
            let norm_sq = (&g_raw * &u).dot(&u);
            if norm_sq > 1e-12 {
                let cand = u / norm_sq.sqrt();
                let val = grad.dot(&cand);
                if val > best_val {
                    best_val = val;
                    best = cand;
                }
            }
        };
        if n == 2 {
            let m = 10_000;
            for t in 0..m {
                let phi = 2.0 * std::f64::consts::PI * t as f64 / m as f64;
                consider(DVector::from_vec(vec![phi.cos(), phi.sin()]));
            }
        } else {
            // Spherical Fibonacci lattice.
            let m = 30_000;
            let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
            for t in 0..m {
                let z = 1.0 - 2.0 * (t as f64 + 0.5) / m as f64;
                let r = (1.0 - z * z).sqrt();
                let phi = golden * t as f64;
                consider(DVector::from_vec(vec![r * phi.cos(), r * phi.sin(), z]));
            }
        }
        let cosine = direction.dot(&best) / (direction.norm() * best.norm());
        worst_cosine = worst_cosine.min(cosine);
        assert!(cosine > 0.999, "trial {trial} (n={n}): cosine {cosine}");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 10, "took {elapsed:?}");
    pass(
        6,
        "steepest ascent under the metric matches brute force",
        format!("50 instances, worst cosine {worst_cosine:.6} in {elapsed:.2?}"),
    );
}

/// Criterion 7: the property suites — pseudoinverse identities, the gradient
/// and metric transformation laws on every shipped congruent pair,
/// finite-difference gradient checks, the MLE fixed point for every k,
/// measure covariance atom for atom, and byte-identical rerun determinism.
#[test]
fn acceptance_7_property_suites() {
    // Penrose conditions at 1e-8 on random symmetric PSD matrices to 8×8.
    let mut rng = rng::stream(2024, StreamLabel::Theta);
    let mut worst_penrose = 0.0f64;
    for dim in 1..=8usize {
        for _ in 0..4 {
            let rank = 1 + dim / 2;
            let b = DMatrix::from_fn(rank, dim, |_, _| rng::uniform_in(&mut rng, -1.0, 1.0));
            let m_raw = b.transpose() * &b;
            let m_raw = 0.5 * (&m_raw + m_raw.transpose());
            let m = MetricMatrix::new(m_raw.clone()).unwrap();
            let p = m.pinv();
            let scale = m_raw.norm().max(1.0);
            worst_penrose = worst_penrose
                .max((&m_raw * &p * &m_raw - &m_raw).norm() / scale)
                .max((&p * &m_raw * &p - &p).norm() / p.norm().max(1.0));
            let mp = &m_raw * &p;
            let pm = &p * &m_raw;
            worst_penrose = worst_penrose
                .max((&mp - mp.transpose()).norm() / scale)
                .max((&pm - pm.transpose()).norm() / scale);
        }
    }
    assert!(worst_penrose < 1e-8, "penrose residual {worst_penrose}");

    // Gradient transformation law (through congruence verification) and the
    // metric transformation law on every shipped pair, both at 1e-8.
    let mut theta_rng = rng::stream(31, StreamLabel::Theta);
    let mut probe_rng = rng::stream(31, StreamLabel::Probe);
    for pair in pairs::shipped() {
        let report = verify_congruence(&pair, 48, 4242).unwrap();
        assert!(report.pass, "pair {}: {}", pair.label(), report.message);
        assert!(report.max_jacobian_property_residual < 1e-8);
        let beta = pair.sample_theta(&mut theta_rng);
        let points: Vec<InputPoint> = (0..32)
            .map(|_| pair.f.input_space().sample(&mut probe_rng))
            .collect();
        let joint = JointMeasure::uniform_diagonal(points).unwrap();
        let resid = metric_transformation_residual(&pair, &beta, &joint).unwrap();
        assert!(resid < 1e-8, "pair {}: metric law residual {resid}", pair.label());
    }

    // Finite-difference gradient checks below 1e-4 on the shipped models.
    for k in 1..=4u32 {
        let err = fd_gradient_check(&GaussianModel::log_density(k), 32, 55).unwrap();
        assert!(err < 1e-4, "k={k}: {err}");
    }
    let err = fd_gradient_check(&GaussianModel::density(2), 32, 55).unwrap();
    assert!(err < 1e-4, "density: {err}");

    // The MLE is a fixed point of the batch update for every k.
    let data = GaussianData::sample_gaussian(50_000, 3.0, 3.0, 13).unwrap();
    let (mu_hat, var_hat) = data.mle();
    for k in 1..=4u32 {
        let sk = sigma_power_from_sq(var_hat, k);
        let (mu1, s1) = gaussian_loglik_gd_step((mu_hat, sk), &data, 0.01, k).unwrap();
        assert!((mu1 - mu_hat).abs() < 1e-9 * mu_hat.abs().max(1.0));
        assert!((s1 - sk).abs() < 1e-9 * sk.max(1.0));
    }

    // Measure covariance, atom for atom, for the batch rule over every
    // two-parameter pair.
    let small = Arc::new(GaussianData::sample_gaussian(500, 3.0, 3.0, 17).unwrap());
    let batch = GaussianBatchRule::new(small, StepSchedule::Constant(1e-3), BatchScaling::Mean);
    for pair in pairs::shipped() {
        if pair.f.param_dim() != 2 {
            continue;
        }
        let mut t_rng = rng::stream(19, StreamLabel::Theta);
        let hist_f = History::new(vec![pair.sample_theta(&mut t_rng)]).unwrap();
        let hist_g = hist_f.mapped(&pair.psi);
        let mut rng_f = rng::stream(23, StreamLabel::Rule);
        let mut rng_g = rng::stream(23, StreamLabel::Rule);
        let out_f = plain_step_once(&batch, pair.f.as_ref(), &hist_f, &mut rng_f);
        let out_g = plain_step_once(&batch, pair.g.as_ref(), &hist_g, &mut rng_g);
        assert!(
            measures_match(&out_f.measure, &out_g.measure, 1e-12),
            "pair {}",
            pair.label()
        );
    }

    // Byte-identical rerun determinism of the experiment pipeline.
    let mut cfg = ExperimentConfig::for_variant(Variant::Fig1);
    cfg.n_data = 2_000;
    cfg.iterations = 1_000;
    cfg.alpha = 0.001 / 2_000.0;
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let paths_a = write_output(dir_a.path(), &figure1(&cfg).unwrap()).unwrap();
    let paths_b = write_output(dir_b.path(), &figure1(&cfg).unwrap()).unwrap();
    for (a, b) in paths_a.iter().zip(&paths_b) {
        let bytes_a = std::fs::read(a).unwrap();
        let bytes_b = std::fs::read(b).unwrap();
        assert_eq!(bytes_a, bytes_b, "{} differs between reruns", a.display());
    }

    // The naturalized rule passes the same first-order identity the plain
    // rule fails (ties the suites to the headline claim).
    let data = Arc::new(GaussianData::sample_gaussian(2_000, 3.0, 3.0, 19).unwrap());
    let nat = RunnableRule::Naturalized(Arc::new(naturalize(
        Arc::new(GaussianBatchRule::new(
            data,
            StepSchedule::Constant(0.05),
            BatchScaling::Mean,
        )),
        MetricSpec::ClosedFormFisher,
    )));
    let pair = pairs::gaussian_pair(1, 4, DensityMode::LogDensity);
    let report = check_covariance(&nat, &pair, 1, 50, 8, 29, 1e-7, Coupling::Rebase).unwrap();
    assert!(report.pass, "naturalized residual {}", report.max_residual());

    pass(
        7,
        "property suites",
        format!(
            "penrose {worst_penrose:.2e}; transformation laws, gradient checks, MLE fixed \
             points, measure covariance, and rerun determinism all inside tolerance"
        ),
    );
}
